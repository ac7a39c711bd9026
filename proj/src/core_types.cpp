#include "segcal/core_types.hpp"

#include <cmath>
#include <cstring>
#include <fstream>
#include <sstream>

namespace segcal {

const char* errc_name(Errc code) noexcept {
  switch (code) {
    case Errc::malformed_header: return "malformed header";
    case Errc::truncated_payload: return "truncated payload";
    case Errc::out_of_range_class: return "out-of-range class";
    case Errc::io_failure: return "i/o failure";
    case Errc::shape_mismatch: return "shape mismatch";
    case Errc::config_error: return "config error";
    case Errc::calibration_error: return "calibration error";
    case Errc::numeric_error: return "numeric error";
  }
  return "unknown error";
}

LabelMask LabelMask::create(int height, int width, int classes,
                            std::vector<std::uint8_t> data) {
  if (height <= 0 || width <= 0) {
    throw Error(Errc::shape_mismatch, "mask dimensions must be positive");
  }
  if (classes < 2 || classes > 256) {
    throw Error(Errc::out_of_range_class,
                "mask class count must be in [2, 256], got " +
                    std::to_string(classes));
  }
  if (data.size() != static_cast<std::size_t>(height) * width) {
    throw Error(Errc::truncated_payload,
                "mask payload length " + std::to_string(data.size()) +
                    " does not match " + std::to_string(height) + "x" +
                    std::to_string(width));
  }
  for (std::size_t i = 0; i < data.size(); ++i) {
    if (data[i] >= classes) {
      throw Error(Errc::out_of_range_class,
                  "pixel " + std::to_string(i) + " has class " +
                      std::to_string(int(data[i])) + " >= " +
                      std::to_string(classes));
    }
  }
  return LabelMask{height, width, classes, std::move(data)};
}

ScoreMap ScoreMap::zeros(int height, int width, int classes) {
  ScoreMap s{height, width, classes, {}};
  s.data.assign(static_cast<std::size_t>(height) * width * classes, 0.0);
  return s;
}

ScoreMap ScoreMap::create(int height, int width, int classes,
                          std::vector<double> data) {
  if (height <= 0 || width <= 0 || classes < 1) {
    throw Error(Errc::shape_mismatch, "score map dimensions must be positive");
  }
  if (data.size() != static_cast<std::size_t>(height) * width * classes) {
    throw Error(Errc::truncated_payload,
                "score payload length " + std::to_string(data.size()) +
                    " does not match shape");
  }
  for (double v : data) {
    if (!std::isfinite(v)) {
      throw Error(Errc::numeric_error, "score map contains non-finite value");
    }
  }
  return ScoreMap{height, width, classes, std::move(data)};
}

PredMask argmax_predict(const ScoreMap& scores) {
  PredMask pred{scores.height, scores.width, scores.classes, {}};
  pred.data.resize(static_cast<std::size_t>(scores.pixels()));
  const int c = scores.classes;
  for (int i = 0; i < scores.pixels(); ++i) {
    int best = 0;
    double best_score = scores.at(i, 0);
    for (int k = 1; k < c; ++k) {
      double s = scores.at(i, k);
      if (s > best_score) {  // strict: ties keep the lowest index
        best_score = s;
        best = k;
      }
    }
    pred.data[static_cast<std::size_t>(i)] = static_cast<std::uint8_t>(best);
  }
  return pred;
}

namespace {

struct Header {
  int height = 0;
  int width = 0;
  int classes = 0;
};

Header read_header(std::istream& in, const std::string& magic,
                   const std::filesystem::path& path) {
  std::string line;
  if (!std::getline(in, line)) {
    throw Error(Errc::malformed_header, "missing header in " + path.string());
  }
  std::istringstream parse(line);
  std::string tag;
  Header h;
  if (!(parse >> tag >> h.height >> h.width >> h.classes) || tag != magic) {
    throw Error(Errc::malformed_header,
                "expected \"" + magic + " <h> <w> <c>\" in " + path.string());
  }
  std::string extra;
  if (parse >> extra) {
    throw Error(Errc::malformed_header,
                "trailing tokens in header of " + path.string());
  }
  if (h.height <= 0 || h.width <= 0 || h.classes < 1) {
    throw Error(Errc::malformed_header,
                "non-positive dimensions in header of " + path.string());
  }
  return h;
}

std::ifstream open_for_read(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) {
    throw Error(Errc::io_failure, "cannot open " + path.string());
  }
  return in;
}

std::ofstream open_for_write(const std::filesystem::path& path) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) {
    throw Error(Errc::io_failure, "cannot write " + path.string());
  }
  return out;
}

void expect_eof(std::istream& in, const std::filesystem::path& path) {
  char extra;
  if (in.read(&extra, 1)) {
    throw Error(Errc::truncated_payload,
                "trailing bytes after payload in " + path.string());
  }
}

float decode_f32_le(const unsigned char* bytes) {
  std::uint32_t bits = std::uint32_t(bytes[0]) | (std::uint32_t(bytes[1]) << 8) |
                       (std::uint32_t(bytes[2]) << 16) |
                       (std::uint32_t(bytes[3]) << 24);
  float value;
  std::memcpy(&value, &bits, sizeof value);
  return value;
}

void encode_f32_le(float value, unsigned char* bytes) {
  std::uint32_t bits;
  std::memcpy(&bits, &value, sizeof bits);
  bytes[0] = static_cast<unsigned char>(bits & 0xff);
  bytes[1] = static_cast<unsigned char>((bits >> 8) & 0xff);
  bytes[2] = static_cast<unsigned char>((bits >> 16) & 0xff);
  bytes[3] = static_cast<unsigned char>((bits >> 24) & 0xff);
}

}  // namespace

LabelMask load_mask(const std::filesystem::path& path, int classes) {
  auto in = open_for_read(path);
  Header h = read_header(in, "MSK1", path);
  if (h.classes != classes) {
    throw Error(Errc::shape_mismatch,
                "mask declares " + std::to_string(h.classes) +
                    " classes, caller expects " + std::to_string(classes));
  }
  std::size_t count = static_cast<std::size_t>(h.height) * h.width;
  std::vector<std::uint8_t> payload(count);
  in.read(reinterpret_cast<char*>(payload.data()),
          static_cast<std::streamsize>(count));
  if (static_cast<std::size_t>(in.gcount()) != count) {
    throw Error(Errc::truncated_payload,
                path.string() + ": got " + std::to_string(in.gcount()) +
                    " payload bytes, need " + std::to_string(count));
  }
  expect_eof(in, path);
  return LabelMask::create(h.height, h.width, h.classes, std::move(payload));
}

void save_mask(const LabelMask& mask, const std::filesystem::path& path) {
  if (mask.pixels() <= 0 ||
      mask.data.size() != static_cast<std::size_t>(mask.pixels())) {
    throw Error(Errc::shape_mismatch, "refusing to write invalid mask");
  }
  auto out = open_for_write(path);
  out << "MSK1 " << mask.height << ' ' << mask.width << ' ' << mask.classes
      << '\n';
  out.write(reinterpret_cast<const char*>(mask.data.data()),
            static_cast<std::streamsize>(mask.data.size()));
  if (!out) {
    throw Error(Errc::io_failure, "write failed for " + path.string());
  }
}

ScoreMap load_scores(const std::filesystem::path& path) {
  auto in = open_for_read(path);
  Header h = read_header(in, "SCR1", path);
  std::size_t count = static_cast<std::size_t>(h.height) * h.width * h.classes;
  std::vector<unsigned char> raw(count * 4);
  in.read(reinterpret_cast<char*>(raw.data()),
          static_cast<std::streamsize>(raw.size()));
  if (static_cast<std::size_t>(in.gcount()) != raw.size()) {
    throw Error(Errc::truncated_payload,
                path.string() + ": got " + std::to_string(in.gcount()) +
                    " payload bytes, need " + std::to_string(raw.size()));
  }
  expect_eof(in, path);
  std::vector<double> values(count);
  for (std::size_t i = 0; i < count; ++i) {
    values[i] = static_cast<double>(decode_f32_le(raw.data() + 4 * i));
    if (!std::isfinite(values[i])) {
      throw Error(Errc::numeric_error,
                  path.string() + ": non-finite value at index " +
                      std::to_string(i));
    }
  }
  return ScoreMap{h.height, h.width, h.classes, std::move(values)};
}

void save_scores(const ScoreMap& scores, const std::filesystem::path& path) {
  if (scores.height <= 0 || scores.width <= 0 || scores.classes < 1) {
    throw Error(Errc::shape_mismatch,
                "refusing to write score map with empty dimensions");
  }
  if (scores.data.size() !=
      static_cast<std::size_t>(scores.pixels()) * scores.classes) {
    throw Error(Errc::shape_mismatch, "score payload length mismatch");
  }
  auto out = open_for_write(path);
  out << "SCR1 " << scores.height << ' ' << scores.width << ' '
      << scores.classes << '\n';
  std::vector<unsigned char> raw(scores.data.size() * 4);
  for (std::size_t i = 0; i < scores.data.size(); ++i) {
    double v = scores.data[i];
    if (!std::isfinite(v)) {
      throw Error(Errc::numeric_error, "non-finite score at index " +
                                           std::to_string(i));
    }
    encode_f32_le(static_cast<float>(v), raw.data() + 4 * i);
  }
  out.write(reinterpret_cast<const char*>(raw.data()),
            static_cast<std::streamsize>(raw.size()));
  if (!out) {
    throw Error(Errc::io_failure, "write failed for " + path.string());
  }
}

void quantize_to_f32(ScoreMap& scores) {
  for (double& v : scores.data) {
    v = static_cast<double>(static_cast<float>(v));
  }
}

DatasetManifest load_manifest(const std::filesystem::path& path,
                              bool verify_headers) {
  auto in = open_for_read(path);
  DatasetManifest manifest;
  const auto base = path.has_parent_path() ? path.parent_path()
                                           : std::filesystem::path(".");
  std::string line;
  int line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    std::size_t start = line.find_first_not_of(" \t");
    if (start == std::string::npos || line[start] == '#') continue;
    std::size_t tab = line.find('\t', start);
    if (tab == std::string::npos) {
      throw Error(Errc::malformed_header,
                  path.string() + ":" + std::to_string(line_no) +
                      ": expected scores_path<TAB>mask_path");
    }
    std::filesystem::path scores_p = line.substr(start, tab - start);
    std::filesystem::path mask_p = line.substr(tab + 1);
    if (scores_p.empty() || mask_p.empty()) {
      throw Error(Errc::malformed_header,
                  path.string() + ":" + std::to_string(line_no) +
                      ": empty path");
    }
    if (scores_p.is_relative()) scores_p = base / scores_p;
    if (mask_p.is_relative()) mask_p = base / mask_p;
    manifest.entries.push_back({std::move(scores_p), std::move(mask_p)});
  }
  if (manifest.entries.empty()) {
    throw Error(Errc::malformed_header,
                path.string() + ": manifest has no entries");
  }

  auto peek_mask = [](const std::filesystem::path& p) {
    auto f = open_for_read(p);
    return read_header(f, "MSK1", p);
  };
  Header first = peek_mask(manifest.entries.front().mask_path);
  manifest.classes = first.classes;
  manifest.pixels_per_image = first.height * first.width;
  if (verify_headers) {
    for (const auto& entry : manifest.entries) {
      Header mh = peek_mask(entry.mask_path);
      if (mh.classes != manifest.classes ||
          mh.height * mh.width != manifest.pixels_per_image) {
        throw Error(Errc::shape_mismatch,
                    entry.mask_path.string() +
                        ": mask shape differs from first manifest entry");
      }
      auto f = open_for_read(entry.scores_path);
      Header sh = read_header(f, "SCR1", entry.scores_path);
      if (sh.height * sh.width != manifest.pixels_per_image) {
        throw Error(Errc::shape_mismatch,
                    entry.scores_path.string() +
                        ": pixel count differs from first manifest entry");
      }
    }
  }
  return manifest;
}

void save_manifest(const DatasetManifest& manifest,
                   const std::filesystem::path& path) {
  if (manifest.entries.empty()) {
    throw Error(Errc::config_error, "refusing to write empty manifest");
  }
  auto out = open_for_write(path);
  out << "# scores_path\tmask_path\n";
  for (const auto& entry : manifest.entries) {
    out << entry.scores_path.string() << '\t' << entry.mask_path.string()
        << '\n';
  }
  if (!out) {
    throw Error(Errc::io_failure, "write failed for " + path.string());
  }
}

}  // namespace segcal
