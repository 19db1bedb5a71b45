#include <torch/extension.h>

__global__ void sigmoid_kernel(const float* x, float* s, int n) {
    int i = blockIdx.x * blockDim.x + threadIdx.x;
    if (i < n) s[i] = 1.0f / (1.0f + expf(-x[i]));
}

__global__ void mul_kernel(const float* x, const float* s, float* y, int n) {
    int i = blockIdx.x * blockDim.x + threadIdx.x;
    if (i < n) y[i] = x[i] * s[i];
}

torch::Tensor swish(torch::Tensor x) {
    auto s = torch::empty_like(x);
    auto y = torch::empty_like(x);
    int n = x.numel();
    int threads = 256, blocks = (n + threads - 1) / threads;
    sigmoid_kernel<<<blocks, threads>>>(x.data_ptr<float>(), s.data_ptr<float>(), n);
    mul_kernel<<<blocks, threads>>>(x.data_ptr<float>(), s.data_ptr<float>(), y.data_ptr<float>(), n);
    return y;
}
