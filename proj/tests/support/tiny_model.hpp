#pragma once

#include <cstdint>

#include "nsdesk/netcore/model.hpp"

namespace nsdesk::testing {

// Two-stage network on 8x8 inputs with two attribute heads; fast enough to
// run thousands of forward passes inside a unit test.
inline net::ModelConfig tiny_config(std::size_t num_classes = 4) {
    net::ModelConfig c = net::default_model_config(num_classes, {"shape", "colour"}, {3, 2});
    c.backbone.input_size = 8;
    c.backbone.widths = {4, 6};
    c.backbone.blocks_per_stage = 1;
    return c;
}

template <typename T>
net::Model<T> tiny_model(std::uint64_t seed, std::size_t num_classes = 4) {
    return net::Model<T>(tiny_config(num_classes), seed);
}

}  // namespace nsdesk::testing
