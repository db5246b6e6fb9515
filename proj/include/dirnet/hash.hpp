// Copyright 2026 The dirnet Authors.
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <openssl/evp.h>

#include <array>
#include <cstdio>
#include <fstream>
#include <iterator>
#include <memory>
#include <stdexcept>
#include <string>
#include <string_view>

namespace dirnet {

/// SHA-1 of a git blob object ("blob <size>\0" + content), as lowercase hex.
inline std::string git_blob_hash(std::string_view content) {
  std::unique_ptr<EVP_MD_CTX, decltype(&EVP_MD_CTX_free)> ctx(EVP_MD_CTX_new(), &EVP_MD_CTX_free);
  if (!ctx || EVP_DigestInit_ex(ctx.get(), EVP_sha1(), nullptr) != 1)
    throw std::runtime_error("SHA-1 unavailable");
  std::string head = "blob " + std::to_string(content.size());
  EVP_DigestUpdate(ctx.get(), head.data(), head.size() + 1);  // includes the NUL
  EVP_DigestUpdate(ctx.get(), content.data(), content.size());
  std::array<unsigned char, EVP_MAX_MD_SIZE> md{};
  unsigned int len = 0;
  EVP_DigestFinal_ex(ctx.get(), md.data(), &len);
  std::string hex;
  char buf[3];
  for (unsigned int i = 0; i < len; ++i) {
    std::snprintf(buf, sizeof buf, "%02x", md[i]);
    hex += buf;
  }
  return hex;
}

inline std::string git_blob_hash_file(const std::string& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw std::runtime_error("cannot open " + path + " for hashing");
  std::string content((std::istreambuf_iterator<char>(is)), std::istreambuf_iterator<char>());
  return git_blob_hash(content);
}

}  // namespace dirnet
