#pragma once

#include "retro3d/model.hpp"

namespace retro3d::model::detail {

/// Rows [0, rows) of the sinusoidal table for `dim`.
Tensor position_rows(std::size_t rows, std::size_t dim);
/// Row `position` only.
Tensor position_row(std::size_t position, std::size_t dim);
Var embed(nn::Bound& p, const ModelConfig& c, const std::vector<int>& ids);
Var feed_forward(nn::Bound& p, const ModelConfig& c, const std::string& prefix, const Var& x, DropoutStream& drop);

}  // namespace retro3d::model::detail
