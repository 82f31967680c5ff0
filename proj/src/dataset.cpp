#include "pwkd/dataset.hpp"

#include <cstring>
#include <fstream>

namespace pwkd {

namespace {

uint32_t read_be32(std::ifstream& f, const std::string& path) {
  unsigned char b[4];
  if (!f.read(reinterpret_cast<char*>(b), 4))
    throw IoError("truncated header in " + path);
  return (static_cast<uint32_t>(b[0]) << 24) | (static_cast<uint32_t>(b[1]) << 16) |
         (static_cast<uint32_t>(b[2]) << 8) | static_cast<uint32_t>(b[3]);
}

std::vector<unsigned char> read_payload(std::ifstream& f, size_t n, const std::string& path) {
  std::vector<unsigned char> buf(n);
  if (!f.read(reinterpret_cast<char*>(buf.data()), static_cast<std::streamsize>(n)))
    throw IoError("truncated payload in " + path + " (wanted " + std::to_string(n) + " bytes)");
  return buf;
}

struct RawSplit {
  std::vector<unsigned char> pixels;  // N*C*H*W
  std::vector<int> labels;
  int n = 0, c = 0, h = 0, w = 0;
};

RawSplit read_idx_pair(const std::string& images_path, const std::string& labels_path) {
  std::ifstream imgs(images_path, std::ios::binary);
  if (!imgs) throw IoError("cannot open " + images_path);
  if (uint32_t magic = read_be32(imgs, images_path); magic != 2051)
    throw IoError(images_path + ": bad magic " + std::to_string(magic) + " (expected 2051)");
  RawSplit out;
  out.n = static_cast<int>(read_be32(imgs, images_path));
  out.h = static_cast<int>(read_be32(imgs, images_path));
  out.w = static_cast<int>(read_be32(imgs, images_path));
  out.c = 1;
  out.pixels = read_payload(imgs, static_cast<size_t>(out.n) * out.h * out.w, images_path);

  std::ifstream labs(labels_path, std::ios::binary);
  if (!labs) throw IoError("cannot open " + labels_path);
  if (uint32_t magic = read_be32(labs, labels_path); magic != 2049)
    throw IoError(labels_path + ": bad magic " + std::to_string(magic) + " (expected 2049)");
  const int ln = static_cast<int>(read_be32(labs, labels_path));
  if (ln != out.n)
    throw IoError(labels_path + ": " + std::to_string(ln) + " labels for " +
                  std::to_string(out.n) + " images in " + images_path);
  auto lab = read_payload(labs, static_cast<size_t>(ln), labels_path);
  out.labels.assign(lab.begin(), lab.end());
  return out;
}

RawSplit select(const RawSplit& in, const std::vector<int>& idx) {
  RawSplit out;
  out.n = static_cast<int>(idx.size());
  out.c = in.c;
  out.h = in.h;
  out.w = in.w;
  const size_t sample = static_cast<size_t>(in.c) * in.h * in.w;
  out.pixels.resize(sample * idx.size());
  out.labels.resize(idx.size());
  for (size_t i = 0; i < idx.size(); ++i) {
    std::memcpy(out.pixels.data() + i * sample,
                in.pixels.data() + static_cast<size_t>(idx[i]) * sample, sample);
    out.labels[i] = in.labels[static_cast<size_t>(idx[i])];
  }
  return out;
}

// normalization stats from the training split, applied to both splits
Dataset finalize(const std::string& name, const RawSplit& train, const RawSplit& test) {
  Dataset ds;
  ds.name = name;
  const int C = train.c;
  const size_t plane = static_cast<size_t>(train.h) * train.w;
  ds.mean.assign(static_cast<size_t>(C), 0.0f);
  ds.stdev.assign(static_cast<size_t>(C), 0.0f);
  for (int c = 0; c < C; ++c) {
    double sum = 0.0, sq = 0.0;
    const size_t count = static_cast<size_t>(train.n) * plane;
    for (int n = 0; n < train.n; ++n) {
      const unsigned char* p =
          train.pixels.data() + (static_cast<size_t>(n) * C + c) * plane;
      for (size_t i = 0; i < plane; ++i) {
        const double v = p[i] / 255.0;
        sum += v;
        sq += v * v;
      }
    }
    const double mean = sum / static_cast<double>(count);
    const double var = std::max(0.0, sq / static_cast<double>(count) - mean * mean);
    ds.mean[static_cast<size_t>(c)] = static_cast<float>(mean);
    ds.stdev[static_cast<size_t>(c)] = static_cast<float>(std::max(std::sqrt(var), 1e-6));
  }

  auto to_tensor = [&](const RawSplit& split) {
    Tensor t({split.n, C, split.h, split.w});
    for (int n = 0; n < split.n; ++n)
      for (int c = 0; c < C; ++c) {
        const unsigned char* p =
            split.pixels.data() + (static_cast<size_t>(n) * C + c) * plane;
        float* q = &t.at4(n, c, 0, 0);
        for (size_t i = 0; i < plane; ++i)
          q[i] = (static_cast<float>(p[i]) / 255.0f - ds.mean[static_cast<size_t>(c)]) /
                 ds.stdev[static_cast<size_t>(c)];
      }
    return t;
  };
  ds.train_x = to_tensor(train);
  ds.train_y = train.labels;
  ds.test_x = to_tensor(test);
  ds.test_y = test.labels;
  ds.classes = 10;
  return ds;
}

}  // namespace

std::vector<int> subset_indices(int total, int n, uint64_t seed) {
  if (n <= 0 || n >= total) {
    std::vector<int> all(static_cast<size_t>(total));
    for (int i = 0; i < total; ++i) all[static_cast<size_t>(i)] = i;
    return all;
  }
  auto perm = permutation(total, derive_seed(seed, "subset"));
  perm.resize(static_cast<size_t>(n));
  return perm;
}

Dataset load_mnist(const std::string& dir, int subset, uint64_t seed) {
  auto train = read_idx_pair(dir + "/train-images-idx3-ubyte", dir + "/train-labels-idx1-ubyte");
  auto test = read_idx_pair(dir + "/t10k-images-idx3-ubyte", dir + "/t10k-labels-idx1-ubyte");
  if (subset > 0 && subset < train.n) train = select(train, subset_indices(train.n, subset, seed));
  return finalize("mnist", train, test);
}

Dataset load_cifar10(const std::string& dir, int subset, uint64_t seed) {
  constexpr int kRecord = 3073;
  constexpr int kPerFile = 10000;
  auto read_batch = [&](const std::string& path, RawSplit& out) {
    std::ifstream f(path, std::ios::binary);
    if (!f) throw IoError("cannot open " + path);
    f.seekg(0, std::ios::end);
    const auto size = f.tellg();
    if (size != static_cast<std::streamoff>(kRecord) * kPerFile)
      throw IoError(path + ": expected " + std::to_string(kRecord * kPerFile) + " bytes, got " +
                    std::to_string(static_cast<long long>(size)));
    f.seekg(0);
    auto buf = read_payload(f, static_cast<size_t>(kRecord) * kPerFile, path);
    const size_t sample = 3 * 1024;
    const size_t base = out.pixels.size();
    out.pixels.resize(base + sample * kPerFile);
    for (int i = 0; i < kPerFile; ++i) {
      const unsigned char* rec = buf.data() + static_cast<size_t>(i) * kRecord;
      if (rec[0] > 9) throw IoError(path + ": label byte out of range in record " + std::to_string(i));
      out.labels.push_back(rec[0]);
      std::memcpy(out.pixels.data() + base + static_cast<size_t>(i) * sample, rec + 1, sample);
    }
    out.n += kPerFile;
  };

  RawSplit train;
  train.c = 3;
  train.h = train.w = 32;
  for (int b = 1; b <= 5; ++b) read_batch(dir + "/data_batch_" + std::to_string(b) + ".bin", train);
  RawSplit test;
  test.c = 3;
  test.h = test.w = 32;
  read_batch(dir + "/test_batch.bin", test);
  if (subset > 0 && subset < train.n) train = select(train, subset_indices(train.n, subset, seed));
  return finalize("cifar10", train, test);
}

Dataset load_dataset(const std::string& name, const std::string& dir, int subset, uint64_t seed) {
  if (name == "mnist") return load_mnist(dir, subset, seed);
  if (name == "cifar10") return load_cifar10(dir, subset, seed);
  throw ConfigError("unknown dataset '" + name + "' (mnist|cifar10)");
}

void augment_batch(Tensor& batch, Rng& rng) {
  const int N = batch.dim(0), C = batch.dim(1), H = batch.dim(2), W = batch.dim(3);
  constexpr int kPad = 4;
  std::vector<float> plane(static_cast<size_t>(H) * W);
  for (int n = 0; n < N; ++n) {
    const bool flip = rng.uniform() < 0.5;
    const int dy = static_cast<int>(rng.below(2 * kPad + 1)) - kPad;
    const int dx = static_cast<int>(rng.below(2 * kPad + 1)) - kPad;
    for (int c = 0; c < C; ++c) {
      float* p = &batch.at4(n, c, 0, 0);
      std::copy_n(p, plane.size(), plane.data());
      for (int y = 0; y < H; ++y)
        for (int x = 0; x < W; ++x) {
          const int sy = y + dy;
          const int sx = flip ? (W - 1 - x) + dx : x + dx;
          p[static_cast<size_t>(y) * W + x] =
              (sy >= 0 && sy < H && sx >= 0 && sx < W)
                  ? plane[static_cast<size_t>(sy) * W + sx]
                  : 0.0f;
        }
    }
  }
}

}  // namespace pwkd
