#pragma once

#include <stdexcept>
#include <string>

namespace fogdet {

enum class errc {
    malformed_header,
    unsupported_maxval,
    truncated_data,
    io_failure,
    invalid_depth,
    dimension_mismatch,
    transmission_underflow,
    malformed_xml,
    unknown_class,
    degenerate_box,
    class_list_mismatch,
    shape_mismatch,
    architecture_mismatch,
    missing_trace,
    missing_depth,
    divergence,
    unknown_image_id,
    bad_config,
    invalid_param,
};

const char* errc_name(errc c);

class error : public std::runtime_error {
public:
    error(errc code, const std::string& what)
        : std::runtime_error(std::string(errc_name(code)) + ": " + what), code_(code) {}

    errc code() const { return code_; }

private:
    errc code_;
};

} // namespace fogdet
