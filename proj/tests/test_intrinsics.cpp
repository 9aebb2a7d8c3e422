// Copyright 2026 The ilora Authors
// SPDX-License-Identifier: Apache-2.0

#include <doctest.h>

#include <sstream>

#include "ilora/intrinsics.hpp"

using namespace ilora;

namespace {

const CodecParams kCodec{0.5, 12.0, 1.3};

IntrinsicMap random_map(IntrinsicKind kind, int h, int w, Rng& rng) {
  IntrinsicMap m;
  m.kind = kind;
  m.height = h;
  m.width = w;
  m.data.resize(channel_count(kind), h * w);
  m.mask = Mask::Constant(h * w, true);
  for (int p = 0; p < h * w; ++p) {
    switch (kind) {
      case IntrinsicKind::normal: {
        Eigen::Vector3f n(float(rng.normal()), float(rng.normal()), float(rng.normal()));
        m.data.col(p) = n.normalized();
        break;
      }
      case IntrinsicKind::depth: m.data(0, p) = float(rng.uniform(kCodec.depth_min, kCodec.depth_max)); break;
      case IntrinsicKind::albedo:
        for (int c = 0; c < 3; ++c) m.data(c, p) = float(rng.uniform(0, 1));
        break;
      case IntrinsicKind::shading: m.data(0, p) = float(rng.uniform(0, kCodec.shading_max)); break;
    }
  }
  return m;
}

}  // namespace

TEST_CASE("codec anchors") {
  IntrinsicMap n;
  n.kind = IntrinsicKind::normal;
  n.height = n.width = 2;
  n.data.resize(3, 4);
  n.data.colwise() = Eigen::Vector3f(0, 0, 1);
  n.mask = Mask::Constant(4, true);
  const auto enc = encode_intrinsic(n, kCodec);
  CHECK(enc.data == n.data);
  CHECK(decode_intrinsic(enc).data == n.data);

  IntrinsicMap d;
  d.kind = IntrinsicKind::depth;
  d.height = d.width = 2;
  d.mask = Mask::Constant(4, true);
  d.data = Eigen::MatrixXf::Constant(1, 4, float(kCodec.depth_min));
  CHECK(encode_intrinsic(d, kCodec).data.isConstant(-1.0f));
  d.data.setConstant(float(kCodec.depth_max));
  CHECK(encode_intrinsic(d, kCodec).data.isConstant(1.0f));

  EncodedTarget zero;
  zero.kind = IntrinsicKind::depth;
  zero.height = zero.width = 2;
  zero.data = Eigen::MatrixXf::Zero(3, 4);
  zero.codec = kCodec;
  CHECK(decode_intrinsic(zero).data.isConstant(float(0.5 * (kCodec.depth_min + kCodec.depth_max))));

  zero.kind = IntrinsicKind::normal;
  CHECK(decode_intrinsic(zero).data.col(0) == Eigen::Vector3f(0, 0, 1));
}

TEST_CASE("depth round trip against a per-pixel affine oracle") {
  Rng rng(21);
  const auto m = random_map(IntrinsicKind::depth, 8, 8, rng);
  const auto enc = encode_intrinsic(m, kCodec);
  const auto back = decode_intrinsic(enc);
  for (int p = 0; p < 64; ++p) {
    const double e = 2.0 * (double(m.data(0, p)) - kCodec.depth_min) / (kCodec.depth_max - kCodec.depth_min) - 1.0;
    CHECK(std::abs(double(enc.data(0, p)) - e) <= 1e-6);
    CHECK(std::abs(double(back.data(0, p)) - double(m.data(0, p))) <= 1e-6 * std::max(1.0, double(m.data(0, p))));
  }
}

TEST_CASE("decode averages depth channels") {
  Rng rng(22);
  EncodedTarget enc;
  enc.kind = IntrinsicKind::depth;
  enc.height = 4;
  enc.width = 4;
  enc.codec = kCodec;
  enc.data.resize(3, 16);
  for (int i = 0; i < enc.data.size(); ++i) enc.data.data()[i] = float(rng.uniform(-1, 1));
  const auto dec = decode_intrinsic(enc);
  for (int p = 0; p < 16; ++p) {
    const double a = (double(enc.data(0, p)) + double(enc.data(1, p)) + double(enc.data(2, p))) / 3.0;
    const double oracle = (a + 1.0) / 2.0 * (kCodec.depth_max - kCodec.depth_min) + kCodec.depth_min;
    CHECK(std::abs(double(dec.data(0, p)) - oracle) <= 1e-5);
  }
}

TEST_CASE("round trip, range and idempotency for every kind") {
  Rng rng(23);
  for (auto kind : kAllKinds) {
    auto m = random_map(kind, 6, 5, rng);
    validate(m);
    const auto enc = encode_intrinsic(m, kCodec);
    CHECK(enc.data.cwiseAbs().maxCoeff() <= 1.0f);
    const auto back = decode_intrinsic(enc);
    for (int p = 0; p < m.pixels(); ++p) {
      if (kind == IntrinsicKind::normal) {
        const Eigen::Vector3d u = back.data.col(p).cast<double>(), v = m.data.col(p).cast<double>();
        CHECK(std::atan2(u.cross(v).norm(), u.dot(v)) * 180.0 / 3.14159265358979 < 0.01);
      } else {
        CHECK((back.data.col(p) - m.data.col(p)).cwiseAbs().maxCoeff() <= 1e-5f);
      }
    }
    const auto again = encode_intrinsic(back, kCodec);
    CHECK((again.data - enc.data).cwiseAbs().maxCoeff() <= 1e-6f);
  }
}

TEST_CASE("clamping and invalid pixels") {
  IntrinsicMap a;
  a.kind = IntrinsicKind::albedo;
  a.height = 1;
  a.width = 2;
  a.data.resize(3, 2);
  a.data << 2, 0.5, -1, 0.5, 0.5, 0.5;
  a.mask = Mask::Constant(2, true);
  a.mask(1) = false;
  const auto enc = encode_intrinsic(a, kCodec);
  CHECK(enc.data.col(0) == Eigen::Vector3f(1, -1, 0));
  CHECK(enc.data.col(1).isZero());
  CHECK_THROWS_AS(validate(a), ConfigError);

  a.data(0, 0) = std::numeric_limits<float>::quiet_NaN();
  CHECK_THROWS_AS(encode_intrinsic(a, kCodec), ConfigError);
  CHECK_THROWS_AS(encode_intrinsic(a, CodecParams{2, 1, 1}), ConfigError);
  CHECK_THROWS_AS(parse_kind("roughness"), ConfigError);
}

TEST_CASE("NTF round trip is bit exact") {
  Rng rng(24);
  const auto m = random_map(IntrinsicKind::albedo, 3, 4, rng);
  std::stringstream buf;
  write_ntf(buf, to_ntf(m));
  const std::string bytes = buf.str();
  CHECK(bytes.substr(0, 4) == "NTF1");
  CHECK(static_cast<unsigned char>(bytes[4]) == 1);
  CHECK(static_cast<unsigned char>(bytes[5]) == 3);
  const auto back = map_from_ntf(IntrinsicKind::albedo, read_ntf(buf), m.mask);
  CHECK(back.data == m.data);
  CHECK(hash_field(back.data) == hash_field(m.data));

  std::stringstream cut(bytes.substr(0, bytes.size() - 3));
  CHECK_THROWS_AS(read_ntf(cut), FormatError);
  std::stringstream bad("NTF2xxxx");
  CHECK_THROWS_AS(read_ntf(bad), FormatError);

  std::stringstream mbuf;
  write_ntf(mbuf, mask_to_ntf(m.mask, 3, 4));
  CHECK(static_cast<unsigned char>(mbuf.str()[4]) == 2);
  CHECK((mask_from_ntf(read_ntf(mbuf)) == m.mask).all());
}
