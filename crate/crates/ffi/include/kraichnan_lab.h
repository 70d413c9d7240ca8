#ifndef KRAICHNAN_LAB_H
#define KRAICHNAN_LAB_H

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

typedef enum KlStatus {
  KL_STATUS_OK = 0,
  KL_STATUS_NULL_POINTER = 1,
  KL_STATUS_INVALID_INPUT = 2,
  KL_STATUS_CONFIG = 3,
  KL_STATUS_STABILITY = 4,
  KL_STATUS_NUMERICAL = 5,
  KL_STATUS_IO = 6,
  KL_STATUS_PANIC = 7,
} KlStatus;

typedef struct KlExperimentResult KlExperimentResult;

typedef struct KlNoiseBasis KlNoiseBasis;

typedef struct KlScalarSolver KlScalarSolver;

typedef struct KlScalarConfig {
  size_t d;
  uint32_t n;
  double kappa_t;
  uint32_t k_max;
  double dt;
  double t_end;
  uint64_t seed;
} KlScalarConfig;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

// Copies the last error message of this thread into `buf` (NUL-terminated,
// truncated to `len`). Returns the full message length without the NUL.
//
// # Safety
// `buf` must be null or valid for `len` bytes.
size_t kl_last_error(char *buf, size_t len);

// Limit stretching constant `c_L` for noise intensity `chi`.
double kl_c_l(double chi);

// Writes the limit diffusion matrix `L(b)` in row-major order to `out[9]`.
//
// # Safety
// `b` must point to 3 doubles and `out` to 9.
enum KlStatus kl_l_matrix(const double *b, double chi, double *out);

// Divergence-free vector noise on the shell `n <= |k| <= 2n`.
//
// # Safety
// `out` must be a valid pointer; on success it receives a new handle.
enum KlStatus kl_noise_basis_new(uint32_t n, double chi, struct KlNoiseBasis **out);

// # Safety
// `basis` must be null or a handle from [`kl_noise_basis_new`], freed once.
void kl_noise_basis_free(struct KlNoiseBasis *basis);

// # Safety
// `basis` must be a live handle.
size_t kl_noise_basis_len(const struct KlNoiseBasis *basis);

// Writes the one-point covariance tensor row-major to `out[9]`.
//
// # Safety
// `basis` must be a live handle and `out` valid for 9 doubles.
enum KlStatus kl_noise_basis_covariance(const struct KlNoiseBasis *basis, double *out);

// Midpoint spectral solver for the transported scalar.
//
// # Safety
// `cfg` and `out` must be valid pointers.
enum KlStatus kl_scalar_solver_new(const struct KlScalarConfig *cfg, struct KlScalarSolver **out);

// # Safety
// `solver` must be null or a handle from [`kl_scalar_solver_new`], freed once.
void kl_scalar_solver_free(struct KlScalarSolver *solver);

// Number of physical grid points (`N^d`); field buffers have this length.
//
// # Safety
// `solver` must be a live handle.
size_t kl_scalar_solver_grid_len(const struct KlScalarSolver *solver);

// Evolves physical values `theta0` along noise path `path` and writes the
// final physical values to `out`. Both buffers hold `len` doubles.
//
// # Safety
// `solver` must be a live handle; `theta0` and `out` valid for `len` doubles.
enum KlStatus kl_scalar_solver_run(const struct KlScalarSolver *solver,
                                   const double *theta0,
                                   size_t len,
                                   uint64_t path,
                                   double *out);

// Monte Carlo estimate of `E|b_T|^2 / |b_0|^2` for the limit SDE started
// at `b0` (Euler-Maruyama, calibrated diffusion).
//
// # Safety
// `b0` must point to 3 doubles; `mean` and `stderr` must be valid.
enum KlStatus kl_limit_sde_growth(const double *b0,
                                  double dt,
                                  double t_end,
                                  size_t paths,
                                  uint64_t seed,
                                  double *mean,
                                  double *stderr);

// Runs a named experiment (`"ln-converge"`, `"scalar-conserve"`, ...) with
// JSON parameters (may be null for defaults).
//
// # Safety
// `name` must be a NUL-terminated string, `params_json` null or one, and
// `out` a valid pointer.
enum KlStatus kl_experiment_run(const char *name,
                                const char *params_json,
                                uint64_t seed,
                                struct KlExperimentResult **out);

// # Safety
// `result` must be null or a handle from [`kl_experiment_run`], freed once.
void kl_experiment_result_free(struct KlExperimentResult *result);

// # Safety
// `result` must be a live handle.
size_t kl_experiment_result_len(const struct KlExperimentResult *result);

// Criterion id and verdict of entry `index`.
//
// # Safety
// `result` must be a live handle; `id` and `pass` valid pointers.
enum KlStatus kl_experiment_result_get(const struct KlExperimentResult *result,
                                       size_t index,
                                       uint32_t *id,
                                       bool *pass);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* KRAICHNAN_LAB_H */
