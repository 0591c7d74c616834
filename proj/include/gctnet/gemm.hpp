#pragma once

#include <Eigen/Core>

namespace gctnet::detail {

// Row-major C(M,N) = A(M,K) * B(K,N), optionally accumulating into C.
// Single-threaded (Eigen is built without OpenMP here), so the reduction
// order is fixed and results are reproducible run to run.
template <typename T>
void gemm(int m, int n, int k, const T* a, const T* b, T* c, bool accumulate) {
    using M = Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
    Eigen::Map<const M> ma(a, m, k);
    Eigen::Map<const M> mb(b, k, n);
    Eigen::Map<M> mc(c, m, n);
    if (accumulate) {
        mc.noalias() += ma * mb;
    } else {
        mc.noalias() = ma * mb;
    }
}

// C(M,N) = A^T(M,K) * B(K,N) where A is stored as (K,M) row-major.
template <typename T>
void gemm_at(int m, int n, int k, const T* a, const T* b, T* c, bool accumulate) {
    using M = Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
    Eigen::Map<const M> ma(a, k, m);
    Eigen::Map<const M> mb(b, k, n);
    Eigen::Map<M> mc(c, m, n);
    if (accumulate) {
        mc.noalias() += ma.transpose() * mb;
    } else {
        mc.noalias() = ma.transpose() * mb;
    }
}

// C(M,N) = A(M,K) * B^T(K,N) where B is stored as (N,K) row-major.
template <typename T>
void gemm_bt(int m, int n, int k, const T* a, const T* b, T* c, bool accumulate) {
    using M = Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
    Eigen::Map<const M> ma(a, m, k);
    Eigen::Map<const M> mb(b, n, k);
    Eigen::Map<M> mc(c, m, n);
    if (accumulate) {
        mc.noalias() += ma * mb.transpose();
    } else {
        mc.noalias() = ma * mb.transpose();
    }
}

}  // namespace gctnet::detail
