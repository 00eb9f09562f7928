#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "fusim/error.hpp"
#include "fusim/nn/example.hpp"

namespace fusim::data {

using nn::LabeledExample;

struct Resolution {
    std::size_t height = 0;
    std::size_t width = 0;

    friend bool operator==(const Resolution&, const Resolution&) = default;
};

std::string to_string(const Resolution& r);
/// Parses "HxW" (e.g. "16x16").
Resolution parse_resolution(const std::string& text);

/// Labeled images from one source domain. Images are channels x height x width
/// with values in [0, 1].
struct DomainDataset {
    std::vector<LabeledExample> examples;
    std::string domain_id;
    Resolution native_resolution;
    std::size_t channels = 1;
    std::size_t class_count = 0;

    std::size_t size() const noexcept { return examples.size(); }
    /// Number of examples per label, indexed by label.
    std::vector<std::size_t> class_histogram() const;
    /// Sorted distinct labels that occur.
    std::vector<std::size_t> labels() const;
};

// ---------------------------------------------------------------------------
// IDX files (MNIST-style corpora)

enum class IdxErrorKind { io, magic_mismatch, truncated, count_mismatch };

class IdxError : public IoError {
public:
    IdxError(IdxErrorKind kind, const std::string& message) : IoError(message), kind_(kind) {}
    IdxErrorKind kind() const noexcept { return kind_; }

private:
    IdxErrorKind kind_;
};

/// Reads an images file (magic 0x00000803) and labels file (magic 0x00000801).
/// Pixel bytes are divided by 255. `limit` > 0 keeps only the first `limit` examples.
DomainDataset load_idx(const std::filesystem::path& images_path, const std::filesystem::path& labels_path,
                       std::string domain_id = "idx", std::size_t limit = 0);

/// Writes single-channel datasets back as IDX (pixels rounded to the nearest byte).
void save_idx(const DomainDataset& dataset, const std::filesystem::path& images_path,
              const std::filesystem::path& labels_path);

// ---------------------------------------------------------------------------
// Synthetic domains

struct Transform {
    enum class Kind { identity, invert, gaussian_noise, downsample, background_clutter };

    Kind kind = Kind::identity;
    double parameter = 0.0;  // sigma, factor or clutter level

    static Transform identity() { return {Kind::identity, 0.0}; }
    static Transform invert() { return {Kind::invert, 0.0}; }
    static Transform gaussian_noise(double sigma) { return {Kind::gaussian_noise, sigma}; }
    static Transform downsample(std::size_t factor) { return {Kind::downsample, static_cast<double>(factor)}; }
    static Transform background_clutter(double level) { return {Kind::background_clutter, level}; }

    /// "identity", "invert", "gaussian_noise(0.1)", "downsample(2)", "background_clutter(0.3)".
    static Transform parse(const std::string& text);
    std::string to_string() const;

    friend bool operator==(const Transform&, const Transform&) = default;
};

/// Class prototypes are stroke drawings seeded by `base_pattern_seed`, so
/// domains that share it share their label semantics. Transforms are applied
/// in order after rendering at `resolution`.
struct SyntheticDomainSpec {
    std::string domain_id = "synthetic";
    std::uint64_t base_pattern_seed = 1;
    std::vector<Transform> transforms{Transform::identity()};
    Resolution resolution{16, 16};
    std::size_t samples_per_class = 100;
    std::size_t class_count = 10;

    /// Throws ValueError on sigma < 0, factor not in {2, 4} or not dividing the
    /// current resolution, clutter level outside [0, 1], or empty sizes.
    void validate() const;
    /// Resolution after all downsample transforms.
    Resolution output_resolution() const;
};

DomainDataset synth_domain(const SyntheticDomainSpec& spec, std::uint64_t seed);

/// Nearest-neighbour resampling.
nn::Tensor resize_image(const nn::Tensor& image, Resolution target);
DomainDataset resize(const DomainDataset& dataset, Resolution target);

/// Stratified per-label holdout: each label's examples are shuffled and the
/// first round(fraction * count) go to validation, the next to test.
struct DatasetSplit {
    DomainDataset train;
    DomainDataset validation;
    DomainDataset test;
};

DatasetSplit split_holdout(const DomainDataset& dataset, double validation_fraction, double test_fraction,
                           std::uint64_t seed);

}  // namespace fusim::data
