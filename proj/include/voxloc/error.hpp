#ifndef VOXLOC_ERROR_HPP
#define VOXLOC_ERROR_HPP

#include <stdexcept>
#include <string>

namespace voxloc {

enum class Errc {
    // geometry
    empty_cloud,
    out_of_range,
    degenerate_result,
    // sparse tensors / operators
    shape_mismatch,
    stride_violation,
    channel_mismatch,
    stride_mismatch,
    degenerate_batch,
    empty_tensor,
    incomplete_tape,
    // network
    invalid_config,
    config_hash_mismatch,
    corrupt_file,
    // losses
    no_positives,
    no_valid_queries,
    no_valid_anchors,
    // trainer
    insufficient_data,
    // retrieval
    empty_database,
    empty_queries,
    unknown_traversal,
    single_traversal,
    // datasets
    corrupt_manifest,
    missing_cloud_file,
    // cli / io
    io_error,
};

class Error : public std::runtime_error {
public:
    Error(Errc code, const std::string& what) : std::runtime_error(what), code_(code) {}
    Errc code() const { return code_; }

private:
    Errc code_;
};

[[noreturn]] inline void raise(Errc code, const std::string& what) {
    throw Error(code, what);
}

} // namespace voxloc

#endif
