#include <algorithm>
#include <array>
#include <charconv>
#include <fstream>
#include <sstream>

#include "fedsim/data.hpp"
#include "fedsim/error.hpp"

namespace fedsim {

namespace {

std::vector<std::string> split_csv_line(const std::string& line) {
  std::vector<std::string> cells;
  std::string cell;
  std::istringstream in(line);
  while (std::getline(in, cell, ',')) {
    const auto first = cell.find_first_not_of(" \t\r");
    const auto last = cell.find_last_not_of(" \t\r");
    cells.push_back(first == std::string::npos ? "" : cell.substr(first, last - first + 1));
  }
  if (!line.empty() && line.back() == ',') cells.emplace_back();
  return cells;
}

template <typename T>
bool parse_number(const std::string& text, T& out) {
  auto [ptr, ec] = std::from_chars(text.data(), text.data() + text.size(), out);
  return !text.empty() && ec == std::errc() && ptr == text.data() + text.size();
}

}  // namespace

Dataset load_csv(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw ParseError("cannot open " + path.string());

  std::string line;
  if (!std::getline(in, line)) throw ParseError(path.string() + ": missing header row");
  const auto header = split_csv_line(line);
  std::ptrdiff_t label_col = -1;
  std::ptrdiff_t group_col = -1;
  std::vector<std::size_t> feature_cols;
  for (std::size_t c = 0; c < header.size(); ++c) {
    if (header[c] == "label") {
      label_col = static_cast<std::ptrdiff_t>(c);
    } else if (header[c] == "group") {
      group_col = static_cast<std::ptrdiff_t>(c);
    } else {
      feature_cols.push_back(c);
    }
  }
  if (label_col < 0) throw ParseError(path.string() + ":1: missing required column 'label'");
  if (feature_cols.empty()) throw ParseError(path.string() + ":1: no feature columns");

  std::vector<double> values;
  Dataset ds;
  std::size_t line_no = 1;
  int max_label = -1;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    const auto cells = split_csv_line(line);
    auto fail = [&](const std::string& what) {
      throw ParseError(path.string() + ":" + std::to_string(line_no) + ": " + what);
    };
    if (cells.size() != header.size()) {
      fail("expected " + std::to_string(header.size()) + " fields, found " +
           std::to_string(cells.size()));
    }
    int label = 0;
    if (!parse_number(cells[static_cast<std::size_t>(label_col)], label) || label < 0) {
      fail("label '" + cells[static_cast<std::size_t>(label_col)] +
           "' is not a non-negative integer");
    }
    ds.labels.push_back(label);
    max_label = std::max(max_label, label);
    if (group_col >= 0) {
      std::int64_t g = 0;
      if (!parse_number(cells[static_cast<std::size_t>(group_col)], g)) {
        fail("group '" + cells[static_cast<std::size_t>(group_col)] + "' is not an integer");
      }
      ds.groups.push_back(g);
    }
    for (auto c : feature_cols) {
      double v = 0.0;
      if (!parse_number(cells[c], v)) fail("column '" + header[c] + "' is not numeric");
      values.push_back(v);
    }
  }
  if (ds.labels.empty()) throw ParseError(path.string() + ": no data rows");
  ds.features = Matrix(ds.labels.size(), feature_cols.size(), std::move(values));
  ds.num_classes = static_cast<std::size_t>(max_label) + 1;
  ds.source_index.resize(ds.size());
  for (std::size_t i = 0; i < ds.size(); ++i) ds.source_index[i] = i;
  return ds;
}

namespace {

class IdxReader {
 public:
  explicit IdxReader(const std::filesystem::path& path) : path_(path), in_(path, std::ios::binary) {
    if (!in_) throw ParseError("cannot open " + path.string());
  }

  std::uint32_t read_u32() {
    std::array<unsigned char, 4> b{};
    read_bytes(b.data(), b.size());
    return (std::uint32_t{b[0]} << 24) | (std::uint32_t{b[1]} << 16) |
           (std::uint32_t{b[2]} << 8) | std::uint32_t{b[3]};
  }

  void read_bytes(unsigned char* dst, std::size_t n) {
    in_.read(reinterpret_cast<char*>(dst), static_cast<std::streamsize>(n));
    if (static_cast<std::size_t>(in_.gcount()) != n) {
      fail("unexpected end of file");
    }
    offset_ += n;
  }

  // Returns the dimension sizes after checking the magic number.
  std::vector<std::uint32_t> read_header(std::size_t expected_dims) {
    const std::size_t at = offset_;
    const auto magic = read_u32();
    const auto type = (magic >> 8) & 0xff;
    const auto ndims = magic & 0xff;
    if ((magic >> 16) != 0 || type != 0x08) {
      offset_ = at;
      fail("bad magic number (expected unsigned-byte IDX data)");
    }
    if (ndims != expected_dims) {
      offset_ = at;
      fail("expected " + std::to_string(expected_dims) + " dimensions, header says " +
           std::to_string(ndims));
    }
    std::vector<std::uint32_t> dims(ndims);
    for (auto& d : dims) d = read_u32();
    return dims;
  }

  [[noreturn]] void fail(const std::string& what) const {
    throw ParseError(path_.string() + " at byte " + std::to_string(offset_) + ": " + what);
  }

 private:
  std::filesystem::path path_;
  std::ifstream in_;
  std::size_t offset_ = 0;
};

}  // namespace

Dataset load_idx(const std::filesystem::path& images, const std::filesystem::path& labels) {
  IdxReader img(images);
  const auto idims = img.read_header(3);
  IdxReader lab(labels);
  const auto ldims = lab.read_header(1);
  if (idims[0] != ldims[0]) {
    throw ParseError("image count " + std::to_string(idims[0]) + " does not match label count " +
                     std::to_string(ldims[0]));
  }
  const std::size_t n = idims[0];
  if (n == 0) throw ParseError(images.string() + ": no images");
  const std::size_t pixels = std::size_t{idims[1]} * idims[2];

  Dataset ds;
  ds.features = Matrix(n, pixels);
  std::vector<unsigned char> buf(pixels);
  for (std::size_t i = 0; i < n; ++i) {
    img.read_bytes(buf.data(), buf.size());
    auto row = ds.features.row(i);
    for (std::size_t p = 0; p < pixels; ++p) row[p] = static_cast<double>(buf[p]) / 255.0;
  }
  std::vector<unsigned char> lbuf(n);
  lab.read_bytes(lbuf.data(), n);
  ds.labels.assign(lbuf.begin(), lbuf.end());
  ds.num_classes = static_cast<std::size_t>(*std::max_element(lbuf.begin(), lbuf.end())) + 1;
  ds.source_index.resize(n);
  for (std::size_t i = 0; i < n; ++i) ds.source_index[i] = i;
  return ds;
}

Dataset load_dataset(const std::filesystem::path& path, DataFormat format,
                     const std::filesystem::path& idx_labels) {
  if (format == DataFormat::kCsv) return load_csv(path);
  if (idx_labels.empty()) throw ParseError("IDX input needs a label file");
  return load_idx(path, idx_labels);
}

}  // namespace fedsim
