// Frozen reference layer listing for the full-size model: name, output
// shape (H, W, C) and parameter count, in table order.
#pragma once

#include <cstdint>

namespace audit {

struct AuditRow {
  const char* name;
  std::int64_t h, w, c;
  std::int64_t params;
};

// Frozen reference layer listing for the full-size model: name, output
// shape, parameter count, in order.
constexpr AuditRow kFullSizeRows[] = {
    {"img", 192, 192, 3, 0},
    {"conv2d", 192, 192, 32, 896},
    {"conv2d_1", 192, 192, 16, 4624},
    {"batch_normalization", 192, 192, 16, 64},
    {"dropout", 192, 192, 16, 0},
    {"max_pooling2d", 96, 96, 16, 0},
    {"conv2d_2", 96, 96, 64, 9280},
    {"conv2d_3", 96, 96, 32, 18464},
    {"dropout_1", 96, 96, 32, 0},
    {"batch_normalization_1", 96, 96, 32, 128},
    {"max_pooling2d_1", 48, 48, 32, 0},
    {"conv2d_4", 48, 48, 128, 36992},
    {"conv2d_5", 48, 48, 64, 73792},
    {"batch_normalization_2", 48, 48, 64, 256},
    {"dropout_2", 48, 48, 64, 0},
    {"max_pooling2d_2", 24, 24, 64, 0},
    {"conv2d_6", 24, 24, 256, 147712},
    {"conv2d_7", 24, 24, 128, 295040},
    {"batch_normalization_3", 24, 24, 128, 512},
    {"dropout_3", 24, 24, 128, 0},
    {"max_pooling2d_3", 12, 12, 128, 0},
    {"conv2d_8", 12, 12, 512, 590336},
    {"conv2d_9", 12, 12, 256, 1179904},
    {"batch_normalization_4", 12, 12, 256, 1024},
    {"dropout_4", 12, 12, 256, 0},
    {"conv2d_transpose", 24, 24, 128, 131200},
    {"concatenate", 24, 24, 256, 0},
    {"conv2d_10", 24, 24, 256, 590080},
    {"conv2d_11", 24, 24, 256, 590080},
    {"batch_normalization_5", 24, 24, 256, 1024},
    {"dropout_5", 24, 24, 256, 0},
    {"conv2d_transpose_1", 48, 48, 64, 65600},
    {"concatenate_1", 48, 48, 128, 0},
    {"conv2d_12", 48, 48, 128, 147584},
    {"batch_normalization_6", 48, 48, 128, 512},
    {"dropout_6", 48, 48, 128, 0},
    {"conv2d_13", 48, 48, 128, 147584},
    {"batch_normalization_7", 48, 48, 128, 512},
    {"add_1", 48, 48, 128, 0},
    {"conv2d_transpose_2", 96, 96, 32, 16416},
    {"concatenate_2", 96, 96, 64, 0},
    {"conv2d_14", 96, 96, 64, 36928},
    {"batch_normalization_8", 96, 96, 64, 256},
    {"dropout_7", 96, 96, 64, 0},
    {"conv2d_15", 96, 96, 64, 36928},
    {"batch_normalization_9", 96, 96, 64, 256},
    {"add_2", 96, 96, 64, 0},
    {"conv2d_transpose_3", 192, 192, 16, 4112},
    {"concatenate_3", 192, 192, 32, 0},
    {"conv2d_16", 192, 192, 32, 9248},
    {"batch_normalization_10", 192, 192, 32, 128},
    {"dropout_8", 192, 192, 32, 0},
    {"conv2d_17", 192, 192, 32, 9248},
    {"batch_normalization_11", 192, 192, 32, 128},
    {"add_3", 192, 192, 32, 0},
    {"conv2d_18", 192, 192, 3, 99},
};

}  // namespace audit
