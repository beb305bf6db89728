#pragma once

#include <stdexcept>
#include <string>
#include <vector>

namespace cfp {

// Thrown when a computation produces a non-finite value. The message names
// the operation (and, where relevant, the timestep) that produced it.
class NumericError : public std::runtime_error {
public:
    explicit NumericError(const std::string& msg) : std::runtime_error(msg) {}
};

// Dense row-major tensor of doubles. Rank 0 (scalar), 1 and 2 cover every
// shape this project needs.
struct Tensor {
    std::vector<int> shape;
    std::vector<double> data;

    Tensor() = default;
    Tensor(std::vector<int> s, std::vector<double> d);

    static Tensor zeros(std::vector<int> s);
    static Tensor full(std::vector<int> s, double value);
    static Tensor scalar(double value);
    static Tensor vector(std::vector<double> d);
    static Tensor matrix(int rows, int cols, std::vector<double> d);

    int numel() const { return static_cast<int>(data.size()); }
    int rank() const { return static_cast<int>(shape.size()); }
    int rows() const;
    int cols() const;
    bool same_shape(const Tensor& other) const { return shape == other.shape; }

    double& operator[](int i) { return data[static_cast<std::size_t>(i)]; }
    double operator[](int i) const { return data[static_cast<std::size_t>(i)]; }
    double& operator()(int r, int c);
    double operator()(int r, int c) const;

    double* ptr() { return data.data(); }
    const double* ptr() const { return data.data(); }
};

std::string shape_str(const std::vector<int>& shape);

// Throws NumericError naming `what` if any element is NaN or infinite.
void check_finite(const Tensor& t, const std::string& what);

bool all_finite(const Tensor& t);

double l2_norm(const Tensor& t);
double max_abs(const Tensor& t);
double l2_distance(const Tensor& a, const Tensor& b);
double linf_distance(const Tensor& a, const Tensor& b);
double dot(const Tensor& a, const Tensor& b);
double sum(const Tensor& t);
double mean(const Tensor& t);

Tensor clamp01(const Tensor& t);

}  // namespace cfp
