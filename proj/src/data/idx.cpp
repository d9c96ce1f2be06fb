#include <fstream>
#include <iterator>

#include "fedbss/data.hpp"
#include "fedbss/errors.hpp"

namespace fedbss::data {
namespace {

constexpr std::uint32_t kImageMagic = 0x00000803;
constexpr std::uint32_t kLabelMagic = 0x00000801;

std::uint32_t read_be32(std::span<const std::uint8_t> bytes, std::size_t offset, const char* what) {
  if (offset + 4 > bytes.size()) throw FormatError(std::string(what) + ": truncated header", bytes.size());
  return (std::uint32_t{bytes[offset]} << 24) | (std::uint32_t{bytes[offset + 1]} << 16) |
         (std::uint32_t{bytes[offset + 2]} << 8) | std::uint32_t{bytes[offset + 3]};
}

std::vector<std::uint8_t> read_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw FormatError("cannot open " + path.string(), 0);
  return std::vector<std::uint8_t>(std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>());
}

}  // namespace

Dataset parse_idx(std::span<const std::uint8_t> images, std::span<const std::uint8_t> labels,
                  std::size_t num_classes) {
  if (images.empty()) throw FormatError("image file is empty", 0);
  if (labels.empty()) throw FormatError("label file is empty", 0);
  if (read_be32(images, 0, "images") != kImageMagic) throw FormatError("images: bad magic number", 0);
  if (read_be32(labels, 0, "labels") != kLabelMagic) throw FormatError("labels: bad magic number", 0);

  const std::size_t count = read_be32(images, 4, "images");
  const std::size_t rows = read_be32(images, 8, "images");
  const std::size_t cols = read_be32(images, 12, "images");
  const std::size_t label_count = read_be32(labels, 4, "labels");
  if (count != label_count) {
    throw FormatError("images: " + std::to_string(count) + " images but " + std::to_string(label_count) +
                          " labels",
                      4);
  }
  if (count == 0) throw FormatError("images: zero samples", 4);

  const std::size_t pixels = count * rows * cols;
  if (images.size() < 16 + pixels) throw FormatError("images: truncated pixel data", images.size());
  if (images.size() > 16 + pixels) throw FormatError("images: trailing bytes", 16 + pixels);
  if (labels.size() < 8 + count) throw FormatError("labels: truncated label data", labels.size());
  if (labels.size() > 8 + count) throw FormatError("labels: trailing bytes", 8 + count);

  std::vector<float> values(pixels);
  for (std::size_t i = 0; i < pixels; ++i) values[i] = static_cast<float>(images[16 + i]) / 255.0f;

  std::vector<nn::Label> ys(count);
  nn::Label max_label = 0;
  for (std::size_t i = 0; i < count; ++i) {
    ys[i] = labels[8 + i];
    max_label = std::max(max_label, ys[i]);
  }
  if (num_classes == 0) num_classes = static_cast<std::size_t>(max_label) + 1;
  for (std::size_t i = 0; i < count; ++i) {
    if (static_cast<std::size_t>(ys[i]) >= num_classes) {
      throw FormatError("labels: value " + std::to_string(ys[i]) + " exceeds class count", 8 + i);
    }
  }
  return make_dataset(nn::Tensor({count, rows, cols}, std::move(values)), std::move(ys), num_classes);
}

Dataset load_idx(const std::filesystem::path& images_path, const std::filesystem::path& labels_path,
                 std::size_t num_classes) {
  const auto images = read_file(images_path);
  const auto labels = read_file(labels_path);
  return parse_idx(images, labels, num_classes);
}

}  // namespace fedbss::data
