#ifndef DPI_SIM_H
#define DPI_SIM_H

/* Generated by cbindgen from crates/ffi/src/lib.rs; do not edit. */

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

/**
 * Result of every call. Codes 2 to 4 match the exit codes of `dpi-sim`.
 */
typedef enum DpiStatus {
  DPI_STATUS_OK = 0,
  DPI_STATUS_NULL_POINTER = 1,
  DPI_STATUS_CONFIG = 2,
  DPI_STATUS_NUMERICAL = 3,
  DPI_STATUS_INFEASIBLE = 4,
  DPI_STATUS_INVALID_UTF8 = 5,
  DPI_STATUS_OUT_OF_RANGE = 6,
  DPI_STATUS_PANIC = 7,
} DpiStatus;

/**
 * Neuron bias currents settable through [`dpi_neuron_set_current`].
 */
typedef enum DpiCurrent {
  DPI_CURRENT_TAU = 0,
  DPI_CURRENT_GAIN = 1,
  DPI_CURRENT_DC = 2,
  DPI_CURRENT_THRESHOLD = 3,
} DpiCurrent;

/**
 * A network rebuilt from a netlist.
 */
typedef struct DpiNetwork DpiNetwork;

/**
 * One neuron with its state, stepped by the caller.
 */
typedef struct DpiNeuron DpiNeuron;

/**
 * Spikes emitted during one run.
 */
typedef struct DpiRaster DpiRaster;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Copies the last error message of this thread into `buf` (NUL-terminated,
 * truncated to `len`) and returns the full message length in bytes.
 *
 * # Safety
 * `buf` must be null or point to `len` writable bytes.
 */
size_t dpi_last_error(char *buf, size_t len);

/**
 * Library version as a static NUL-terminated string.
 */
const char *dpi_version(void);

/**
 * Creates a neuron at the calibrated DC setting, at rest.
 *
 * # Safety
 * `out_neuron` must be a valid pointer to write the handle to.
 */
enum DpiStatus dpi_neuron_new(struct DpiNeuron **out_neuron);

/**
 * Sets a bias current (A). The neuron keeps its old value if the new
 * parameter set is invalid.
 *
 * # Safety
 * `neuron` must be a live handle from [`dpi_neuron_new`].
 */
enum DpiStatus dpi_neuron_set_current(struct DpiNeuron *neuron, enum DpiCurrent which, double amps);

/**
 * Advances the neuron by `dt` seconds with an excitatory synaptic current
 * `i_syn` (A, above the dark current). Writes 1 to `spiked` if it fired.
 *
 * # Safety
 * `neuron` must be a live handle; `spiked` must be null or writable.
 */
enum DpiStatus dpi_neuron_step(struct DpiNeuron *neuron, double dt, double i_syn, int32_t *spiked);

/**
 * Reads the membrane current (A).
 *
 * # Safety
 * `neuron` must be a live handle and `i_mem` writable.
 */
enum DpiStatus dpi_neuron_i_mem(const struct DpiNeuron *neuron, double *i_mem);

/**
 * Returns the neuron to rest.
 *
 * # Safety
 * `neuron` must be a live handle.
 */
enum DpiStatus dpi_neuron_reset(struct DpiNeuron *neuron);

/**
 * # Safety
 * `neuron` must be null or a handle not freed before.
 */
void dpi_neuron_free(struct DpiNeuron *neuron);

/**
 * Parses and validates netlist text. `calibration_csv` may be null for the
 * built-in calibration table.
 *
 * # Safety
 * String arguments must be null or NUL-terminated; `out_network` writable.
 */
enum DpiStatus dpi_network_from_netlist(const char *netlist,
                                        const char *calibration_csv,
                                        struct DpiNetwork **out_network);

/**
 * Number of input channels and of neurons.
 *
 * # Safety
 * `network` must be a live handle; the outputs must be null or writable.
 */
enum DpiStatus dpi_network_size(const struct DpiNetwork *network,
                                size_t *n_inputs,
                                size_t *n_neurons);

/**
 * Runs the network from rest. `input` holds `steps × channels` bytes,
 * row-major by step; nonzero marks an input spike.
 *
 * # Safety
 * `network` must be a live handle, `input` must point to
 * `steps * channels` readable bytes (or be null when either is 0), and
 * `out_raster` must be writable.
 */
enum DpiStatus dpi_network_simulate(const struct DpiNetwork *network,
                                    const uint8_t *input,
                                    size_t steps,
                                    size_t channels,
                                    double dt,
                                    struct DpiRaster **out_raster);

/**
 * Number of spikes in the raster.
 *
 * # Safety
 * `raster` must be null or a live handle.
 */
size_t dpi_raster_len(const struct DpiRaster *raster);

/**
 * Spike `index`: its step and global neuron id (populations in netlist
 * order). Spikes are ordered by step, then neuron.
 *
 * # Safety
 * `raster` must be a live handle; the outputs must be null or writable.
 */
enum DpiStatus dpi_raster_get(const struct DpiRaster *raster,
                              size_t index,
                              size_t *step,
                              size_t *neuron);

/**
 * # Safety
 * `raster` must be null or a handle not freed before.
 */
void dpi_raster_free(struct DpiRaster *raster);

/**
 * # Safety
 * `network` must be null or a handle not freed before.
 */
void dpi_network_free(struct DpiNetwork *network);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* DPI_SIM_H */
