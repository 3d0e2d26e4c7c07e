#pragma once

// Binary tensor container shared by parameter files and checkpoints.

#include <cstdint>
#include <filesystem>
#include <string>
#include <string_view>
#include <vector>

#include <nlohmann/json.hpp>

#include "toolgcn/gradcheck.hpp"

namespace toolgcn::detail {

inline constexpr std::uint32_t kContainerVersion = 1;

enum class ContainerKind : std::uint32_t { kParams = 0, kCheckpoint = 1 };

struct Container {
  ContainerKind kind = ContainerKind::kParams;
  std::uint64_t digest = 0;
  nlohmann::json metadata;
  std::vector<NamedTensor> tensors;
};

std::uint64_t fnv1a(std::string_view bytes, std::uint64_t h = 0xcbf29ce484222325ULL);

void write_container(const Container& c, const std::filesystem::path& path);
Container read_container(const std::filesystem::path& path);

}  // namespace toolgcn::detail
