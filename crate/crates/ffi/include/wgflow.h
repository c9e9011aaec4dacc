#ifndef WGFLOW_H
#define WGFLOW_H

#include <stddef.h>

#ifdef __cplusplus
extern "C" {
#endif

typedef int WgStatus;

#define WG_OK 0
#define WG_ERR_NULL 1
#define WG_ERR_INVALID 2
#define WG_ERR_SOLVER 3
#define WG_ERR_BUFFER 4
#define WG_ERR_PANIC 5

#define WG_SCHEME_LJKO 0
#define WG_SCHEME_EVBDF2 1
#define WG_SCHEME_VIM 2
#define WG_SCHEME_BDF2 3

#define WG_ENERGY_ENTROPY 0
#define WG_ENERGY_POROUS 1

/* Opaque handles. */
typedef struct WgMesh WgMesh;
typedef struct WgTrajectory WgTrajectory;

typedef struct WgFlowParams {
    int scheme;
    double tau;
    size_t steps;
    double alpha;
    size_t init_substeps;
    int energy;
    /* porous-medium exponent, ignored for the entropy */
    double delta;
} WgFlowParams;

/* Message of the last failed call on this thread, empty after a success.
   Valid until the next call on the same thread. */
const char *wg_last_error_message(void);

const char *wg_version(void);

WgStatus wg_mesh_interval(size_t n, double a, double b, WgMesh **out);
WgStatus wg_mesh_cartesian(size_t nx, size_t ny, double x0, double x1, double y0, double y1, WgMesh **out);
void wg_mesh_free(WgMesh *mesh);
size_t wg_mesh_cell_count(const WgMesh *mesh);
WgStatus wg_mesh_measures(const WgMesh *mesh, double *out, size_t len);
/* interleaved (x, y) pairs, len >= 2 * cell count */
WgStatus wg_mesh_centers(const WgMesh *mesh, double *out, size_t len);

WgFlowParams wg_flow_params_default(void);

/* potential may be NULL. On WG_ERR_SOLVER *out holds the truncated trajectory. */
WgStatus wg_run_flow(const WgMesh *mesh, const WgFlowParams *params, const double *rho0, const double *potential,
                     size_t len, WgTrajectory **out);
void wg_trajectory_free(WgTrajectory *traj);
size_t wg_trajectory_len(const WgTrajectory *traj);
size_t wg_trajectory_failed_step(const WgTrajectory *traj);
WgStatus wg_trajectory_density(const WgTrajectory *traj, size_t n, double *out, size_t len);

WgStatus wg_extrapolate(const WgMesh *mesh, const double *mu, const double *nu, size_t len, double alpha, double *out);

#ifdef __cplusplus
}
#endif

#endif
