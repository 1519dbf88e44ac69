#include <cstdio>
#include "hrg/tensor.hpp"
#include "hrg/kernels.hpp"
int main() {
    auto a = hrg::Tensor::from_data({2,2}, {1,2,3,4});
    auto b = hrg::Tensor::from_data({2,1}, {0,1});
    auto c = hrg::matmul(a, b);
    std::printf("kernels=%s c=[%g,%g] macs=%llu\n", hrg::kern::active().name,
                c.at(0), c.at(1), (unsigned long long)hrg::op_counter().mac_count);
    return 0;
}
