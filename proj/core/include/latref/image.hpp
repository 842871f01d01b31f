#pragma once

#include <filesystem>
#include <string>
#include <vector>

#include "latref/tensor.hpp"

namespace latref {

/// Images are CxHxW float tensors with C=3 and values in [0,1].
using ImageTensor = Tensor;

bool is_valid_image(const ImageTensor& x);
void require_image(const ImageTensor& x, const char* what);

ImageTensor read_png(const std::filesystem::path& path);
void write_png(const std::filesystem::path& path, const ImageTensor& img);

/// Catmull-Rom bicubic resampling with edge clamping.
ImageTensor resize_bicubic(const ImageTensor& img, int out_h, int out_w);

ImageTensor center_crop(const ImageTensor& img, int h, int w);

/// Center-crop to a square then bicubic-resize, the corpus ingestion rule.
ImageTensor fit_to_resolution(const ImageTensor& img, int size);

Tensor clamp01(Tensor t);

/// Sorted recursive listing of *.png under a directory.
std::vector<std::filesystem::path> list_pngs(const std::filesystem::path& dir);

}  // namespace latref
