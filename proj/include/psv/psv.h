/*
 * Surround-view parking-slot and lane-marking perception pipeline.
 *
 * C interface of libpsv: opaque handles plus status codes. Every function
 * returns PSV_OK on success; on failure psv_last_error() carries a
 * human-readable message for the calling thread.
 */
#ifndef PSV_H
#define PSV_H

#include <stddef.h>
#include <stdint.h>

#ifdef __cplusplus
extern "C" {
#endif

typedef enum psv_status {
    PSV_OK = 0,
    PSV_ERR_VALIDATION = 1, /* bad inputs: shapes, ranges, malformed files */
    PSV_ERR_NUMERIC = 2,    /* numerical failure: NaN gradients, failed checks */
    PSV_ERR_INTERNAL = 3
} psv_status;

const char* psv_version(void);
const char* psv_status_name(psv_status status);
/* Message of the most recent failure on this thread; empty when none. */
const char* psv_last_error(void);
/* Frees strings returned through char** out-parameters. */
void psv_string_free(char* s);

/* ------------------------------------------------------------------ */
/* Model lifecycle                                                     */

typedef struct psv_model psv_model; /* opaque */

enum { PSV_COMBINE_SUM = 0, PSV_COMBINE_CONCAT = 1, PSV_COMBINE_CONVPLUS = 2 };

typedef struct psv_net_options {
    int vh_kernel;   /* 3, 5, 7, 9 or 11 */
    int combine;     /* PSV_COMBINE_* */
    int vh_enabled;  /* 0 reproduces the plain encoder-decoder topology */
    int num_classes; /* 6 */
    int encoder_channels[5];
    int input_h, input_w; /* multiples of 32 */
} psv_net_options;

void psv_net_options_defaults(psv_net_options* opts);
/* Text key-value network config (vh_kernel, combine, vh_enabled,
 * num_classes, encoder_channels, input). */
psv_status psv_net_options_from_file(const char* path, psv_net_options* opts);

psv_status psv_model_build(const psv_net_options* opts, uint64_t seed, psv_model** out);
psv_status psv_model_load(const char* path, psv_model** out);
psv_status psv_model_save(const psv_model* model, const char* path);
void psv_model_free(psv_model* model);
/* One-line-per-field text description (configuration + parameter count). */
psv_status psv_model_describe(const psv_model* model, char** out);

/* ------------------------------------------------------------------ */
/* Training and evaluation                                             */

typedef struct psv_train_options {
    int batch_size;       /* default 10 */
    double learning_rate; /* default 1e-4 */
    int epochs;           /* default 50 */
    double lambda[5];     /* pre-output loss weights, default all 1.0 */
    double weight_max;    /* inverse-proportion clamp, default 1000 */
    uint64_t seed;
    const char* checkpoint_dir; /* per-epoch model files; NULL disables */
    const char* log_path;       /* one text line per epoch; NULL disables */
} psv_train_options;

void psv_train_options_defaults(psv_train_options* opts);

/* dataset_root holds images/, labels/ and split.txt; trains on the train
 * split with per-epoch validation mIoU when a val split exists. */
psv_status psv_train(psv_model* model, const char* dataset_root,
                     const psv_train_options* opts);

/* split is "train", "val" or "test". The report mirrors the evaluation
 * table: per-class IoU, pixel accuracy, mean IoU. */
psv_status psv_evaluate(const psv_model* model, const char* dataset_root,
                        const char* split, char** report_out);

/* RGB PNG (dims multiples of 32) -> single-channel PNG of class indices. */
psv_status psv_segment(const psv_model* model, const char* image_png,
                       const char* mask_png);

/* ------------------------------------------------------------------ */
/* Geometric extraction                                                */

typedef struct psv_extract_options {
    double rho_res_px;
    double theta_res_deg;
    int vote_threshold;          /* 0 derives 0.4 * expected line length */
    double expected_line_len_px; /* 0 derives canvas/3 */
    double merge_angle_tol_deg;
    double merge_dist_tol_px;
    double merge_gap_tol_px;
    double perp_tol_deg;
    double entrance_min_m, entrance_max_m;
    double px_per_m; /* 25 at the 4 cm/px desk scale, 100 at PSV scale */
} psv_extract_options;

void psv_extract_options_defaults(psv_extract_options* opts);

/* Label mask PNG -> slot/lane records ("SLOT ...", "LANE ..." lines, meters
 * in the vehicle frame). overlay_png may be NULL. */
psv_status psv_extract(const char* mask_png, const psv_extract_options* opts,
                       const char* records_path, const char* overlay_png);

/* ------------------------------------------------------------------ */
/* Surround-view formation and data generation                         */

/* calib_path: text calibration (per camera: K, dist, size, H). The four
 * views are undistorted, warped top-down and mask-stitched into the
 * 1000x1000 PSV canvas (1 cm per pixel). */
psv_status psv_stitch(const char* calib_path, const char* front_png,
                      const char* right_png, const char* back_png,
                      const char* left_png, const char* out_png);

typedef struct psv_generate_options {
    int count;
    int canvas_px;    /* default 256 */
    double cm_per_px; /* default 4.0 */
    uint64_t seed;
} psv_generate_options;

void psv_generate_options_defaults(psv_generate_options* opts);

/* Synthetic scenes into out_dir/{images,labels} plus split.txt (6:1:3). */
psv_status psv_generate(const char* out_dir, const psv_generate_options* opts);

/* ------------------------------------------------------------------ */
/* Self checks                                                         */

/* Finite-difference gradient suite over every layer and the training loss.
 * Returns PSV_ERR_NUMERIC when any entry exceeds its tolerance; the report
 * carries one line per entry either way. */
psv_status psv_grad_check(uint64_t seed, char** report_out);

#ifdef __cplusplus
}
#endif

#endif /* PSV_H */
