#ifndef MMFLOW_H
#define MMFLOW_H

/* C interface to the mmflow shared library. Every entry point returns one of
 * the MMF_* codes; on failure mmf_last_error() describes the most recent
 * error on the calling thread. Handles are created and released by the
 * matching _open/_free pair. */

#ifdef __cplusplus
extern "C" {
#endif

#define MMF_OK 0
#define MMF_E_USAGE 2
#define MMF_E_NUMERIC 3

const char* mmf_version(void);
const char* mmf_last_error(void);

/* ---- experiment configuration ------------------------------------------- */

typedef struct mmf_config mmf_config;

int mmf_config_open(const char* path, mmf_config** out);
int mmf_config_parse(const char* text, mmf_config** out);
int mmf_config_set(mmf_config* cfg, const char* key, const char* value);
/* returns NULL when the key is absent */
const char* mmf_config_get(mmf_config* cfg, const char* key);
unsigned long long mmf_config_digest(mmf_config* cfg);
int mmf_config_write(mmf_config* cfg, const char* path);
void mmf_config_free(mmf_config* cfg);

/* ---- commands ------------------------------------------------------------ */

int mmf_train(mmf_config* cfg);
int mmf_sample(mmf_config* cfg, const char* checkpoint, const char* task, long long count,
               const char* out_csv);
int mmf_eval(mmf_config* cfg, const char* samples_csv, const char* out_csv);
int mmf_merge(const char* checkpoint_a, const char* checkpoint_b, const char* shared_modality,
              const char* out_path);
int mmf_schedules_bench(mmf_config* cfg, const char* out_csv);

#ifdef __cplusplus
}
#endif

#endif /* MMFLOW_H */
