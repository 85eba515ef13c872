#ifndef DEFT_IO_HPP
#define DEFT_IO_HPP

#include <string>
#include <vector>

#include "deft/tensor.hpp"

namespace deft {

// Binary PGM (P5), one byte per pixel, values already in [0,1].
void write_pgm(const std::string& path, const std::vector<float>& intensities, int height, int width);

std::vector<float> read_pgm(const std::string& path, int& height, int& width);

std::string format_csv_double(double v);

// median / lower / upper quartile with linear interpolation
double quantile(std::vector<double> values, double q);

}  // namespace deft

#endif
