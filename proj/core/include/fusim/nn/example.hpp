#pragma once

#include <cstddef>

#include "fusim/nn/tensor.hpp"

namespace fusim::nn {

/// One labeled input (channels x height x width for images).
struct LabeledExample {
    Tensor image;
    std::size_t label = 0;

    friend bool operator==(const LabeledExample&, const LabeledExample&) = default;
};

}  // namespace fusim::nn
