#ifndef POEM_POEM_H
#define POEM_POEM_H

/* C interface to libpoem. Every object is an opaque handle owned by the
 * caller and released with its *_free function. Functions return a status
 * code; on failure poem_last_error() describes the problem (thread-local,
 * valid until the next call on the same thread). Strings returned through
 * char** out-parameters are heap-allocated and released with
 * poem_string_free. */

#include <stddef.h>
#include <stdint.h>

#if defined(_WIN32)
#define POEM_API __declspec(dllexport)
#else
#define POEM_API __attribute__((visibility("default")))
#endif

#ifdef __cplusplus
extern "C" {
#endif

typedef enum poem_status {
    POEM_OK = 0,
    POEM_INVALID_ARGUMENT = 1,
    POEM_SHAPE_MISMATCH = 2,
    POEM_UNBOUND_INPUT = 3,
    POEM_NON_SCALAR_LOSS = 4,
    POEM_INFEASIBLE_CONFIG = 5,
    POEM_UNKNOWN_TOKEN = 6,
    POEM_NO_VALID_QUESTION = 7,
    POEM_EMPTY_SET = 8,
    POEM_AMBIGUOUS = 9,
    POEM_EMPTY_TRAINING_SPLIT = 10,
    POEM_MISSING_PREDICTION = 11,
    POEM_IO = 12,
    POEM_CORRUPT_HEADER = 13,
    POEM_TRUNCATED_PAYLOAD = 14,
    POEM_VERSION_MISMATCH = 15,
    POEM_DUPLICATE_NAME = 16,
    POEM_DIVERGENCE = 17,
    POEM_STACK_UNDERFLOW = 18,
    POEM_UNKNOWN_VARIANT = 19,
    POEM_MISSING_INPUT = 20,
    POEM_UNKNOWN_SUBCOMMAND = 21,
    POEM_INVALID_CONFIG = 22,
    POEM_INTERNAL = 99
} poem_status;

typedef struct poem_config poem_config;
typedef struct poem_dataset poem_dataset;
typedef struct poem_bank poem_bank;
typedef struct poem_model poem_model;

POEM_API const char* poem_last_error(void);
/* Name of a status, e.g. "missing-input". */
POEM_API const char* poem_status_name(poem_status status);
POEM_API void poem_string_free(char* s);

/* ---- configuration */

/* profile: "desk" or "paper" (NULL means desk). overlay_json may be NULL. */
POEM_API poem_status poem_config_create(const char* profile, const char* overlay_json, poem_config** out);
/* Applies a JSON overlay; unknown keys fail with POEM_INVALID_CONFIG. */
POEM_API poem_status poem_config_overlay(poem_config* config, const char* overlay_json);
POEM_API poem_status poem_config_set_seed(poem_config* config, uint64_t seed);
POEM_API poem_status poem_config_set_variant(poem_config* config, const char* variant);
POEM_API poem_status poem_config_to_json(const poem_config* config, char** out_json);
POEM_API void poem_config_free(poem_config* config);

/* ---- datasets */

POEM_API poem_status poem_dataset_generate(const poem_config* config, poem_dataset** out);
POEM_API poem_status poem_dataset_save(const poem_dataset* dataset, const char* dir);
POEM_API poem_status poem_dataset_load(const char* dir, poem_dataset** out);
/* The configuration embedded in the dataset. */
POEM_API poem_status poem_dataset_config(const poem_dataset* dataset, poem_config** out);
/* Counts per split and tag, novel categories. */
POEM_API poem_status poem_dataset_summary(const poem_dataset* dataset, char** out_json);
POEM_API void poem_dataset_free(poem_dataset* dataset);

/* ---- prototype banks */

POEM_API poem_status poem_bank_train(const poem_config* config, const poem_dataset* dataset, poem_bank** out);
POEM_API poem_status poem_bank_save(const poem_bank* bank, const char* path);
POEM_API poem_status poem_bank_load(const char* path, poem_bank** out);
/* Size, selected epoch and metric, per-epoch history. */
POEM_API poem_status poem_bank_info(const poem_bank* bank, char** out_json);
POEM_API void poem_bank_free(poem_bank* bank);

/* ---- VQA models */

/* bank may be NULL for variants that do not use a learned bank. */
POEM_API poem_status poem_model_train(const poem_config* config, const poem_dataset* dataset, const poem_bank* bank,
                                      poem_model** out);
POEM_API poem_status poem_model_save(const poem_model* model, const char* path);
POEM_API poem_status poem_model_load(const char* path, poem_model** out);
POEM_API poem_status poem_model_info(const poem_model* model, char** out_json);
POEM_API void poem_model_free(poem_model* model);

/* ---- analysis; every report embeds the run configuration and seed */

POEM_API poem_status poem_evaluate(const poem_model* model, const poem_dataset* dataset, char** out_json);
/* k <= 0 uses the configured cluster count. */
POEM_API poem_status poem_cluster(const poem_bank* bank, const poem_dataset* dataset, int k, char** out_json);
/* Up to `count` validation questions, as a JSON array of trace documents. */
POEM_API poem_status poem_trace(const poem_model* model, const poem_dataset* dataset, size_t count, char** out_json);

#ifdef __cplusplus
}
#endif

#endif
