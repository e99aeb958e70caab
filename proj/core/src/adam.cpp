#include "grammarscope/adam.hpp"

namespace grammarscope::num {

template void adam_step<float>(DenseArrayT<float>&, const DenseArrayT<float>&,
                               OptimizerStateT<float>&, const AdamConfig&);
template void adam_step<double>(DenseArrayT<double>&, const DenseArrayT<double>&,
                                OptimizerStateT<double>&, const AdamConfig&);

}  // namespace grammarscope::num
