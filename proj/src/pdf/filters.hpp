#pragma once

#include <string>
#include <string_view>

namespace matvl::pdf {

std::string flate_decode(std::string_view data);
std::string flate_encode(std::string_view data);
std::string ascii_hex_decode(std::string_view data);
std::string ascii85_decode(std::string_view data);
std::string lzw_decode(std::string_view data, bool early_change);
std::string run_length_decode(std::string_view data);

struct PredictorParams {
  int predictor = 1;
  int colors = 1;
  int bits_per_component = 8;
  int columns = 1;
};

std::string apply_predictor(std::string_view data, const PredictorParams& params);

}  // namespace matvl::pdf
