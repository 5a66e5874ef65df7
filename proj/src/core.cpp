#include "metaopt/core.hpp"

namespace metaopt {

BlockPartition::BlockPartition(std::vector<int> assignment, int block_count)
    : assignment_(std::move(assignment)), block_count_(block_count) {
  if (block_count_ < 1) throw DimensionError("BlockPartition: block_count must be >= 1");
  if (static_cast<Index>(assignment_.size()) < block_count_) {
    throw DimensionError("BlockPartition: more blocks than coordinates");
  }
  sizes_.assign(static_cast<std::size_t>(block_count_), 0);
  identity_ = static_cast<int>(assignment_.size()) == block_count_;
  for (std::size_t i = 0; i < assignment_.size(); ++i) {
    const int b = assignment_[i];
    if (b < 0 || b >= block_count_) {
      throw DimensionError("BlockPartition: coordinate " + std::to_string(i) +
                           " assigned to out-of-range block " + std::to_string(b));
    }
    ++sizes_[static_cast<std::size_t>(b)];
    if (b != static_cast<int>(i)) identity_ = false;
  }
  for (int j = 0; j < block_count_; ++j) {
    if (sizes_[static_cast<std::size_t>(j)] == 0) {
      throw DimensionError("BlockPartition: block " + std::to_string(j) + " is empty");
    }
  }
}

BlockPartition BlockPartition::scalar(Index n) {
  return BlockPartition(std::vector<int>(static_cast<std::size_t>(n), 0), 1);
}

BlockPartition BlockPartition::identity(Index n) {
  std::vector<int> a(static_cast<std::size_t>(n));
  for (std::size_t i = 0; i < a.size(); ++i) a[i] = static_cast<int>(i);
  return BlockPartition(std::move(a), static_cast<int>(n));
}

BlockPartition BlockPartition::contiguous(const std::vector<Index>& sizes) {
  std::vector<int> a;
  for (std::size_t j = 0; j < sizes.size(); ++j) {
    a.insert(a.end(), static_cast<std::size_t>(sizes[j]), static_cast<int>(j));
  }
  return BlockPartition(std::move(a), static_cast<int>(sizes.size()));
}

}  // namespace metaopt
