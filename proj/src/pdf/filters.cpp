#include "filters.hpp"

#include <zlib.h>

#include <cstdlib>
#include <vector>

#include "matvl/pdf/object.hpp"

namespace matvl::pdf {

std::string flate_decode(std::string_view data) {
  z_stream zs{};
  if (inflateInit(&zs) != Z_OK) throw PdfError("inflateInit failed");
  zs.next_in = reinterpret_cast<Bytef*>(const_cast<char*>(data.data()));
  zs.avail_in = static_cast<uInt>(data.size());
  std::string out;
  char buf[16384];
  int rc = Z_OK;
  while (rc == Z_OK) {
    zs.next_out = reinterpret_cast<Bytef*>(buf);
    zs.avail_out = sizeof buf;
    rc = inflate(&zs, Z_NO_FLUSH);
    out.append(buf, sizeof buf - zs.avail_out);
    if (rc == Z_BUF_ERROR && zs.avail_in == 0) break;
  }
  inflateEnd(&zs);
  // Truncated or slightly corrupt streams are common; keep what inflated.
  if (rc != Z_STREAM_END && out.empty() && !data.empty())
    throw PdfError("flate stream is corrupt");
  return out;
}

std::string flate_encode(std::string_view data) {
  uLongf bound = compressBound(static_cast<uLong>(data.size()));
  std::string out(bound, '\0');
  if (compress2(reinterpret_cast<Bytef*>(out.data()), &bound,
                reinterpret_cast<const Bytef*>(data.data()), static_cast<uLong>(data.size()),
                Z_BEST_COMPRESSION) != Z_OK)
    throw PdfError("deflate failed");
  out.resize(bound);
  return out;
}

std::string ascii_hex_decode(std::string_view data) {
  std::string out;
  int hi = -1;
  for (char c : data) {
    if (c == '>') break;
    int v;
    if (c >= '0' && c <= '9') v = c - '0';
    else if (c >= 'a' && c <= 'f') v = c - 'a' + 10;
    else if (c >= 'A' && c <= 'F') v = c - 'A' + 10;
    else continue;
    if (hi < 0) {
      hi = v;
    } else {
      out.push_back(static_cast<char>(hi * 16 + v));
      hi = -1;
    }
  }
  if (hi >= 0) out.push_back(static_cast<char>(hi * 16));
  return out;
}

std::string ascii85_decode(std::string_view data) {
  std::string out;
  std::uint32_t tuple = 0;
  int count = 0;
  std::size_t i = 0;
  if (data.substr(0, 2) == "<~") i = 2;
  for (; i < data.size(); ++i) {
    char c = data[i];
    if (c == '~') break;
    if (c == 'z' && count == 0) {
      out.append(4, '\0');
      continue;
    }
    if (c < '!' || c > 'u') continue;
    tuple = tuple * 85 + static_cast<std::uint32_t>(c - '!');
    if (++count == 5) {
      for (int s = 24; s >= 0; s -= 8) out.push_back(static_cast<char>((tuple >> s) & 0xff));
      tuple = 0;
      count = 0;
    }
  }
  if (count > 1) {
    for (int k = count; k < 5; ++k) tuple = tuple * 85 + 84;
    for (int k = 0; k < count - 1; ++k) out.push_back(static_cast<char>((tuple >> (24 - 8 * k)) & 0xff));
  }
  return out;
}

std::string lzw_decode(std::string_view data, bool early_change) {
  std::vector<std::string> table;
  auto reset = [&] {
    table.clear();
    for (int i = 0; i < 256; ++i) table.emplace_back(1, static_cast<char>(i));
    table.emplace_back();  // 256 clear
    table.emplace_back();  // 257 eod
  };
  reset();
  std::string out;
  int code_len = 9;
  std::uint32_t bitbuf = 0;
  int bits = 0;
  std::string prev;
  bool have_prev = false;
  for (unsigned char byte : data) {
    bitbuf = (bitbuf << 8) | byte;
    bits += 8;
    while (bits >= code_len) {
      int code = static_cast<int>((bitbuf >> (bits - code_len)) & ((1u << code_len) - 1));
      bits -= code_len;
      if (code == 256) {
        reset();
        code_len = 9;
        have_prev = false;
        continue;
      }
      if (code == 257) return out;
      std::string entry;
      if (code < static_cast<int>(table.size()) && (code < 256 || code > 257)) {
        entry = table[static_cast<std::size_t>(code)];
      } else if (have_prev && code == static_cast<int>(table.size())) {
        entry = prev + prev[0];
      } else {
        throw PdfError("bad LZW code");
      }
      out += entry;
      if (have_prev) table.push_back(prev + entry[0]);
      prev = entry;
      have_prev = true;
      const int limit = static_cast<int>(table.size()) + (early_change ? 1 : 0);
      if (limit >= (1 << code_len) && code_len < 12) ++code_len;
    }
  }
  return out;
}

std::string run_length_decode(std::string_view data) {
  std::string out;
  std::size_t i = 0;
  while (i < data.size()) {
    int len = static_cast<unsigned char>(data[i++]);
    if (len == 128) break;
    if (len < 128) {
      std::size_t n = static_cast<std::size_t>(len) + 1;
      out.append(data.substr(i, n));
      i += n;
    } else if (i < data.size()) {
      out.append(static_cast<std::size_t>(257 - len), data[i++]);
    }
  }
  return out;
}

namespace {

int paeth(int a, int b, int c) {
  int p = a + b - c;
  int pa = std::abs(p - a);
  int pb = std::abs(p - b);
  int pc = std::abs(p - c);
  if (pa <= pb && pa <= pc) return a;
  if (pb <= pc) return b;
  return c;
}

}  // namespace

std::string apply_predictor(std::string_view data, const PredictorParams& p) {
  if (p.predictor <= 1) return std::string(data);
  const std::size_t bpp = std::max<std::size_t>(1, static_cast<std::size_t>(p.colors * p.bits_per_component + 7) / 8);
  const std::size_t row_len =
      (static_cast<std::size_t>(p.columns) * p.colors * p.bits_per_component + 7) / 8;
  if (p.predictor == 2) {
    if (p.bits_per_component != 8) return std::string(data);
    std::string out(data);
    for (std::size_t r = 0; r + row_len <= out.size(); r += row_len)
      for (std::size_t i = bpp; i < row_len; ++i)
        out[r + i] = static_cast<char>(out[r + i] + out[r + i - bpp]);
    return out;
  }
  // PNG predictors: every row carries its own filter-type byte.
  std::string out;
  std::vector<unsigned char> prior(row_len, 0);
  std::vector<unsigned char> row(row_len);
  std::size_t pos = 0;
  while (pos < data.size()) {
    int type = static_cast<unsigned char>(data[pos++]);
    std::size_t n = std::min(row_len, data.size() - pos);
    for (std::size_t i = 0; i < n; ++i) row[i] = static_cast<unsigned char>(data[pos + i]);
    for (std::size_t i = n; i < row_len; ++i) row[i] = 0;
    pos += n;
    for (std::size_t i = 0; i < row_len; ++i) {
      int left = i >= bpp ? row[i - bpp] : 0;
      int up = prior[i];
      int up_left = i >= bpp ? prior[i - bpp] : 0;
      int v = row[i];
      switch (type) {
        case 0: break;
        case 1: v += left; break;
        case 2: v += up; break;
        case 3: v += (left + up) / 2; break;
        case 4: v += paeth(left, up, up_left); break;
        default: break;
      }
      row[i] = static_cast<unsigned char>(v & 0xff);
    }
    out.append(reinterpret_cast<const char*>(row.data()), n);
    prior = row;
  }
  return out;
}

}  // namespace matvl::pdf
