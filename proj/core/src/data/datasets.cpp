#include "fusim/data/datasets.hpp"

#include <algorithm>
#include <array>
#include <cctype>
#include <cmath>
#include <fstream>
#include <iterator>
#include <numeric>
#include <random>
#include <set>

#include "fusim/random.hpp"
#include "fusim/text.hpp"

namespace fusim::data {

using nn::Tensor;

std::string to_string(const Resolution& r) { return std::to_string(r.height) + "x" + std::to_string(r.width); }

Resolution parse_resolution(const std::string& text) {
    const auto x = text.find('x');
    if (x == std::string::npos) throw ValueError("resolution '" + text + "' is not of the form HxW");
    const auto h = parse_uint(std::string_view(text).substr(0, x));
    const auto w = parse_uint(std::string_view(text).substr(x + 1));
    if (!h || !w || *h == 0 || *w == 0) {
        throw ValueError("resolution '" + text + "' is not of the form HxW with positive sides");
    }
    return {static_cast<std::size_t>(*h), static_cast<std::size_t>(*w)};
}

std::vector<std::size_t> DomainDataset::class_histogram() const {
    std::vector<std::size_t> hist(class_count, 0);
    for (const auto& ex : examples) {
        if (ex.label >= hist.size()) hist.resize(ex.label + 1, 0);
        ++hist[ex.label];
    }
    return hist;
}

std::vector<std::size_t> DomainDataset::labels() const {
    std::set<std::size_t> seen;
    for (const auto& ex : examples) seen.insert(ex.label);
    return {seen.begin(), seen.end()};
}

// ---------------------------------------------------------------------------
// IDX

namespace {

constexpr std::uint32_t kImagesMagic = 0x00000803;
constexpr std::uint32_t kLabelsMagic = 0x00000801;

std::string read_file(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw IdxError(IdxErrorKind::io, "cannot open " + path.string());
    return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

std::uint32_t read_be32(const std::string& bytes, std::size_t offset, const std::filesystem::path& path) {
    if (offset + 4 > bytes.size()) throw IdxError(IdxErrorKind::truncated, path.string() + ": truncated header");
    std::uint32_t v = 0;
    for (std::size_t i = 0; i < 4; ++i) v = (v << 8) | static_cast<unsigned char>(bytes[offset + i]);
    return v;
}

void put_be32(std::string& out, std::uint32_t v) {
    for (int shift = 24; shift >= 0; shift -= 8) out.push_back(static_cast<char>((v >> shift) & 0xffU));
}

void write_file(const std::filesystem::path& path, const std::string& bytes) {
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw IdxError(IdxErrorKind::io, "cannot write " + path.string());
    out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
}

}  // namespace

DomainDataset load_idx(const std::filesystem::path& images_path, const std::filesystem::path& labels_path,
                       std::string domain_id, std::size_t limit) {
    const std::string images = read_file(images_path);
    const std::string labels = read_file(labels_path);
    if (read_be32(images, 0, images_path) != kImagesMagic) {
        throw IdxError(IdxErrorKind::magic_mismatch, images_path.string() + ": not an IDX image file");
    }
    if (read_be32(labels, 0, labels_path) != kLabelsMagic) {
        throw IdxError(IdxErrorKind::magic_mismatch, labels_path.string() + ": not an IDX label file");
    }
    const std::size_t n_images = read_be32(images, 4, images_path);
    const std::size_t rows = read_be32(images, 8, images_path);
    const std::size_t cols = read_be32(images, 12, images_path);
    const std::size_t n_labels = read_be32(labels, 4, labels_path);
    if (n_images != n_labels) {
        throw IdxError(IdxErrorKind::count_mismatch, "IDX count mismatch: " + std::to_string(n_images) +
                                                         " images vs " + std::to_string(n_labels) + " labels");
    }
    const std::size_t pixels = rows * cols;
    if (images.size() < 16 + n_images * pixels) {
        throw IdxError(IdxErrorKind::truncated, images_path.string() + ": truncated pixel data");
    }
    if (labels.size() < 8 + n_labels) throw IdxError(IdxErrorKind::truncated, labels_path.string() + ": truncated labels");

    const std::size_t count = limit > 0 ? std::min(limit, n_images) : n_images;
    DomainDataset ds;
    ds.domain_id = std::move(domain_id);
    ds.native_resolution = {rows, cols};
    ds.channels = 1;
    ds.examples.reserve(count);
    for (std::size_t i = 0; i < count; ++i) {
        std::vector<double> px(pixels);
        for (std::size_t p = 0; p < pixels; ++p) {
            px[p] = static_cast<unsigned char>(images[16 + i * pixels + p]) / 255.0;
        }
        const std::size_t label = static_cast<unsigned char>(labels[8 + i]);
        ds.class_count = std::max(ds.class_count, label + 1);
        ds.examples.push_back({Tensor({1, rows, cols}, std::move(px)), label});
    }
    return ds;
}

void save_idx(const DomainDataset& dataset, const std::filesystem::path& images_path,
              const std::filesystem::path& labels_path) {
    if (dataset.channels != 1) throw ValueError("save_idx supports single-channel datasets only");
    const auto [rows, cols] = dataset.native_resolution;
    std::string images;
    put_be32(images, kImagesMagic);
    put_be32(images, static_cast<std::uint32_t>(dataset.size()));
    put_be32(images, static_cast<std::uint32_t>(rows));
    put_be32(images, static_cast<std::uint32_t>(cols));
    std::string labels;
    put_be32(labels, kLabelsMagic);
    put_be32(labels, static_cast<std::uint32_t>(dataset.size()));
    for (const auto& ex : dataset.examples) {
        for (double v : ex.image.values()) images.push_back(static_cast<char>(std::lround(std::clamp(v, 0.0, 1.0) * 255.0)));
        labels.push_back(static_cast<char>(ex.label));
    }
    write_file(images_path, images);
    write_file(labels_path, labels);
}

// ---------------------------------------------------------------------------
// Synthetic domains

Transform Transform::parse(const std::string& raw) {
    std::string text;
    for (char c : raw) {
        if (!std::isspace(static_cast<unsigned char>(c))) text.push_back(c);
    }
    const auto open = text.find('(');
    const std::string name = text.substr(0, open);
    double arg = 0.0;
    const bool has_arg = open != std::string::npos;
    if (has_arg) {
        if (text.back() != ')') throw ValueError("transform '" + raw + "': missing ')'");
        const std::string inner = text.substr(open + 1, text.size() - open - 2);
        const auto value = parse_double(inner);
        if (!value) throw ValueError("transform '" + raw + "': bad numeric argument");
        arg = *value;
    }
    auto need = [&](bool want) {
        if (want != has_arg) throw ValueError("transform '" + raw + (want ? "' needs an argument" : "' takes no argument"));
    };
    if (name == "identity") return need(false), identity();
    if (name == "invert") return need(false), invert();
    if (name == "gaussian_noise") return need(true), gaussian_noise(arg);
    if (name == "background_clutter") return need(true), background_clutter(arg);
    if (name == "downsample") {
        need(true);
        if (arg != std::floor(arg) || arg < 1) throw ValueError("downsample factor must be a positive integer");
        return downsample(static_cast<std::size_t>(arg));
    }
    throw ValueError("unknown transform '" + raw + "'");
}

std::string Transform::to_string() const {
    auto num = [](double v) { return format_shortest(v); };
    switch (kind) {
        case Kind::identity: return "identity";
        case Kind::invert: return "invert";
        case Kind::gaussian_noise: return "gaussian_noise(" + num(parameter) + ")";
        case Kind::downsample: return "downsample(" + num(parameter) + ")";
        case Kind::background_clutter: return "background_clutter(" + num(parameter) + ")";
    }
    return "?";
}

void SyntheticDomainSpec::validate() const {
    if (samples_per_class == 0 || class_count == 0) throw ValueError("synthetic domain needs samples and classes");
    if (class_count > 256) throw ValueError("synthetic domain supports at most 256 classes");
    if (resolution.height == 0 || resolution.width == 0) throw ValueError("synthetic resolution must be positive");
    Resolution r = resolution;
    for (const auto& t : transforms) {
        switch (t.kind) {
            case Transform::Kind::gaussian_noise:
                if (!(t.parameter >= 0.0)) throw ValueError("gaussian_noise sigma must be >= 0");
                break;
            case Transform::Kind::background_clutter:
                if (!(t.parameter >= 0.0 && t.parameter <= 1.0)) throw ValueError("background_clutter level must be in [0, 1]");
                break;
            case Transform::Kind::downsample: {
                const auto f = static_cast<std::size_t>(t.parameter);
                if (f != 2 && f != 4) throw ValueError("downsample factor must be 2 or 4");
                if (r.height % f != 0 || r.width % f != 0) {
                    throw ValueError("downsample(" + std::to_string(f) + ") does not divide resolution " + data::to_string(r));
                }
                r = {r.height / f, r.width / f};
                break;
            }
            default: break;
        }
    }
}

Resolution SyntheticDomainSpec::output_resolution() const {
    Resolution r = resolution;
    for (const auto& t : transforms) {
        if (t.kind == Transform::Kind::downsample) {
            const auto f = static_cast<std::size_t>(t.parameter);
            r = {r.height / f, r.width / f};
        }
    }
    return r;
}

namespace {

struct Point {
    double x;
    double y;
};

struct Segment {
    Point a;
    Point b;
};

constexpr std::size_t kStrokesPerClass = 4;

std::vector<Segment> class_prototype(std::uint64_t pattern_seed, std::size_t label) {
    Rng rng(derive_seed(pattern_seed, {0xC1A55, label}));
    std::uniform_real_distribution<double> coord(0.18, 0.82);
    std::vector<Segment> strokes;
    // chained strokes read as a single glyph
    Point cursor{coord(rng), coord(rng)};
    for (std::size_t s = 0; s < kStrokesPerClass; ++s) {
        Point next{coord(rng), coord(rng)};
        strokes.push_back({cursor, next});
        cursor = next;
    }
    return strokes;
}

double segment_distance(const Point& p, const Segment& s) {
    const double dx = s.b.x - s.a.x;
    const double dy = s.b.y - s.a.y;
    const double len2 = dx * dx + dy * dy;
    double t = len2 > 0.0 ? ((p.x - s.a.x) * dx + (p.y - s.a.y) * dy) / len2 : 0.0;
    t = std::clamp(t, 0.0, 1.0);
    const double ex = s.a.x + t * dx - p.x;
    const double ey = s.a.y + t * dy - p.y;
    return std::sqrt(ex * ex + ey * ey);
}

/// Renders strokes with a soft edge of one pixel; the result is max-combined into `image`.
void draw_strokes(std::vector<double>& image, Resolution res, const std::vector<Segment>& strokes, double thickness,
                  double intensity) {
    const double soft = 1.0 / static_cast<double>(std::max(res.height, res.width));
    for (std::size_t y = 0; y < res.height; ++y) {
        for (std::size_t x = 0; x < res.width; ++x) {
            const Point p{(static_cast<double>(x) + 0.5) / static_cast<double>(res.width),
                          (static_cast<double>(y) + 0.5) / static_cast<double>(res.height)};
            double d = 1e9;
            for (const auto& s : strokes) d = std::min(d, segment_distance(p, s));
            const double v = intensity * std::clamp(1.0 - (d - thickness) / soft, 0.0, 1.0);
            double& px = image[y * res.width + x];
            px = std::max(px, v);
        }
    }
}

std::vector<Segment> jitter(const std::vector<Segment>& proto, Rng& rng) {
    std::uniform_real_distribution<double> shift(-0.07, 0.07);
    std::uniform_real_distribution<double> zoom(0.9, 1.1);
    std::uniform_real_distribution<double> angle(-0.15, 0.15);
    std::uniform_real_distribution<double> wobble(-0.03, 0.03);
    const double sx = shift(rng);
    const double sy = shift(rng);
    const double z = zoom(rng);
    const double a = angle(rng);
    const double c = std::cos(a);
    const double s = std::sin(a);
    auto move = [&](Point p) {
        const double u = p.x - 0.5 + wobble(rng);
        const double v = p.y - 0.5 + wobble(rng);
        return Point{0.5 + z * (c * u - s * v) + sx, 0.5 + z * (s * u + c * v) + sy};
    };
    std::vector<Segment> out;
    for (const auto& seg : proto) out.push_back({move(seg.a), move(seg.b)});
    return out;
}

/// Reflects into [0, 1] so additive noise keeps its magnitude at the borders.
double fold_unit(double v) {
    v = std::fmod(std::fabs(v), 2.0);
    return v > 1.0 ? 2.0 - v : v;
}

void apply_transform(std::vector<double>& image, Resolution& res, const Transform& t, Rng& rng) {
    switch (t.kind) {
        case Transform::Kind::identity: return;
        case Transform::Kind::invert:
            for (double& v : image) v = 1.0 - v;
            return;
        case Transform::Kind::gaussian_noise: {
            std::normal_distribution<double> noise(0.0, t.parameter);
            for (double& v : image) v = fold_unit(v + noise(rng));
            return;
        }
        case Transform::Kind::downsample: {
            const auto f = static_cast<std::size_t>(t.parameter);
            const Resolution out{res.height / f, res.width / f};
            std::vector<double> small(out.height * out.width, 0.0);
            for (std::size_t y = 0; y < out.height; ++y) {
                for (std::size_t x = 0; x < out.width; ++x) {
                    double sum = 0.0;
                    for (std::size_t dy = 0; dy < f; ++dy) {
                        for (std::size_t dx = 0; dx < f; ++dx) sum += image[(y * f + dy) * res.width + x * f + dx];
                    }
                    small[y * out.width + x] = sum / static_cast<double>(f * f);
                }
            }
            image = std::move(small);
            res = out;
            return;
        }
        case Transform::Kind::background_clutter: {
            const double level = t.parameter;
            std::vector<double> clutter(image.size(), 0.0);
            std::uniform_real_distribution<double> texture(0.0, 0.5 * level);
            for (double& v : clutter) v = texture(rng);
            std::uniform_real_distribution<double> coord(0.0, 1.0);
            std::uniform_real_distribution<double> length(-0.25, 0.25);
            for (int k = 0; k < 3; ++k) {
                const Point a{coord(rng), coord(rng)};
                const Point b{a.x + length(rng), a.y + length(rng)};
                draw_strokes(clutter, res, {{a, b}}, 0.02, level);
            }
            for (std::size_t i = 0; i < image.size(); ++i) image[i] = std::max(image[i], clutter[i]);
            return;
        }
    }
}

}  // namespace

DomainDataset synth_domain(const SyntheticDomainSpec& spec, std::uint64_t seed) {
    spec.validate();
    DomainDataset ds;
    ds.domain_id = spec.domain_id;
    ds.native_resolution = spec.output_resolution();
    ds.channels = 1;
    ds.class_count = spec.class_count;
    ds.examples.reserve(spec.samples_per_class * spec.class_count);

    std::vector<std::vector<Segment>> prototypes;
    for (std::size_t c = 0; c < spec.class_count; ++c) prototypes.push_back(class_prototype(spec.base_pattern_seed, c));

    std::uniform_real_distribution<double> thickness(0.035, 0.06);
    std::uniform_real_distribution<double> intensity(0.75, 1.0);
    // examples interleave classes so prefixes stay balanced
    for (std::size_t i = 0; i < spec.samples_per_class; ++i) {
        for (std::size_t c = 0; c < spec.class_count; ++c) {
            Rng shape_rng(derive_seed(seed, {0x5A3, c, i}));
            Resolution res = spec.resolution;
            std::vector<double> px(res.height * res.width, 0.0);
            const auto strokes = jitter(prototypes[c], shape_rng);
            const double t = thickness(shape_rng);
            draw_strokes(px, res, strokes, t, intensity(shape_rng));

            Rng transform_rng(derive_seed(seed, {0x7F0, c, i}));
            for (const auto& tr : spec.transforms) apply_transform(px, res, tr, transform_rng);
            ds.examples.push_back({Tensor({1, res.height, res.width}, std::move(px)), c});
        }
    }
    return ds;
}

Tensor resize_image(const Tensor& image, Resolution target) {
    if (image.rank() != 3) throw ShapeError("resize expects a [C x H x W] image");
    if (target.height == 0 || target.width == 0) throw ValueError("resize target sides must be >= 1");
    const std::size_t c = image.shape()[0];
    const std::size_t h = image.shape()[1];
    const std::size_t w = image.shape()[2];
    if (h == target.height && w == target.width) return image;
    Tensor out({c, target.height, target.width});
    for (std::size_t ch = 0; ch < c; ++ch) {
        for (std::size_t y = 0; y < target.height; ++y) {
            const std::size_t sy = y * h / target.height;
            for (std::size_t x = 0; x < target.width; ++x) {
                const std::size_t sx = x * w / target.width;
                out[(ch * target.height + y) * target.width + x] = image[(ch * h + sy) * w + sx];
            }
        }
    }
    return out;
}

DomainDataset resize(const DomainDataset& dataset, Resolution target) {
    DomainDataset out = dataset;
    for (auto& ex : out.examples) ex.image = resize_image(ex.image, target);
    out.native_resolution = target;
    return out;
}

DatasetSplit split_holdout(const DomainDataset& dataset, double validation_fraction, double test_fraction,
                           std::uint64_t seed) {
    if (!(validation_fraction >= 0.0 && test_fraction >= 0.0 && validation_fraction + test_fraction < 1.0)) {
        throw ValueError("holdout fractions must be >= 0 and sum below 1");
    }
    DatasetSplit split{dataset, dataset, dataset};
    split.train.examples.clear();
    split.validation.examples.clear();
    split.test.examples.clear();

    std::vector<std::vector<std::size_t>> by_label;
    for (std::size_t i = 0; i < dataset.size(); ++i) {
        const std::size_t l = dataset.examples[i].label;
        if (l >= by_label.size()) by_label.resize(l + 1);
        by_label[l].push_back(i);
    }
    std::vector<int> role(dataset.size(), 0);  // 0 train, 1 validation, 2 test
    for (std::size_t l = 0; l < by_label.size(); ++l) {
        auto& idx = by_label[l];
        if (idx.empty()) continue;
        Rng rng(derive_seed(seed, {0x5917, l}));
        std::shuffle(idx.begin(), idx.end(), rng);
        const auto n = static_cast<double>(idx.size());
        auto n_val = static_cast<std::size_t>(std::llround(validation_fraction * n));
        auto n_test = static_cast<std::size_t>(std::llround(test_fraction * n));
        while (n_val + n_test >= idx.size() && (n_val + n_test) > 0) {
            if (n_test >= n_val && n_test > 0) --n_test;
            else --n_val;
        }
        for (std::size_t j = 0; j < n_val; ++j) role[idx[j]] = 1;
        for (std::size_t j = n_val; j < n_val + n_test; ++j) role[idx[j]] = 2;
    }
    for (std::size_t i = 0; i < dataset.size(); ++i) {
        auto& target = role[i] == 0 ? split.train : role[i] == 1 ? split.validation : split.test;
        target.examples.push_back(dataset.examples[i]);
    }
    return split;
}

}  // namespace fusim::data
