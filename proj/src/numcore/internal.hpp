#pragma once

#include <Eigen/Core>

#include "imusic/numcore.hpp"

namespace imusic::nc {
inline namespace IMUSIC_NC_ABI {

Tensor make_result(Shape shape, std::vector<real> values, bool track);

using MatR = Eigen::Matrix<real, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using MapR = Eigen::Map<MatR>;
using CMapR = Eigen::Map<const MatR>;

}  // namespace IMUSIC_NC_ABI
}  // namespace imusic::nc
