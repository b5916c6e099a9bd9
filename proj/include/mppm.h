#ifndef MPPM_H
#define MPPM_H

#ifdef __cplusplus
extern "C" {
#endif

/* Opaque bag of key = value settings; resolved and validated by mppm_run. */
typedef struct mppm_config mppm_config;

/* Status codes shared by every call and the CLI exit codes. */
#define MPPM_OK 0
#define MPPM_ERR_CONFIG 1  /* bad usage, bad keys or values, missing paths */
#define MPPM_ERR_RUNTIME 2 /* failures after the configuration resolved */

const char* mppm_version(void);

mppm_config* mppm_config_create(void);
void mppm_config_destroy(mppm_config* cfg);

/* Reads key = value lines from a file into the config; the file's values
 * overwrite keys already present. */
int mppm_config_load_file(mppm_config* cfg, const char* path);

/* Sets one key, overriding anything loaded before. */
int mppm_config_set(mppm_config* cfg, const char* key, const char* value);

/* Resolves the configuration, executes the run, writes artifacts under the
 * configured output directory. */
int mppm_run(const mppm_config* cfg);

/* Message from the most recent failing call on this thread; empty after a
 * success. The pointer stays valid until the next call on the thread. */
const char* mppm_last_error(void);

#ifdef __cplusplus
}
#endif

#endif
