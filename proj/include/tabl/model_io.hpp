#pragma once

#include <filesystem>
#include <string>
#include <string_view>

#include "tabl/network.hpp"

namespace tabl {

/// Lowercase hex SHA-256 of arbitrary bytes.
std::string sha256_hex(std::string_view bytes);

/// Hash of the topology and every base tensor (aux excluded).
std::string content_hash(const Model& model);

/// Writes `bytes` to a sibling temp file and renames it into place.
void write_file_atomic(const std::filesystem::path& path, std::string_view bytes);
std::string read_file(const std::filesystem::path& path);

// Container layout (all integers and reals little-endian):
//   magic "TABLMODL", u32 version, topology, named base tensors,
//   base hash, u8 has_aux, [aux section]
// The aux sidecar is magic "TABLAUX1" followed by the aux section:
//   base hash, u64 rank, u8 strategy, u8 train_lambda, named aux tensors.
std::string serialize_model(const Model& model);
Model deserialize_model(std::string_view bytes);
std::string serialize_aux(const Model& model);
/// Throws IntegrityError when the sidecar was trained against another base.
Model attach_aux(const Model& base, std::string_view aux_bytes);

void save_model(const Model& model, const std::filesystem::path& path);
Model load_model(const std::filesystem::path& path);
void save_aux(const Model& model, const std::filesystem::path& path);
Model load_aux(const Model& base, const std::filesystem::path& path);

}  // namespace tabl
