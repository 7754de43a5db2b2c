#ifndef SENTVEC_H
#define SENTVEC_H

#include <stddef.h>
#include <stdint.h>

#ifdef __cplusplus
extern "C" {
#endif

typedef struct SentvecModel SentvecModel;

/* Functions returning int give 0 on success, -1 on failure. */
const char *sentvec_last_error(void);

SentvecModel *sentvec_load(const char *path);
void sentvec_free(SentvecModel *h);

uint32_t sentvec_dim(const SentvecModel *h);
uint32_t sentvec_vocab_size(const SentvecModel *h);

/* len must equal sentvec_dim(h). */
int sentvec_embed(const SentvecModel *h, const char *sentence, float *out, size_t len);
/* out is row-major, len = n * dim. */
int sentvec_embed_batch(const SentvecModel *h, const char *const *sentences, size_t n, float *out, size_t len);
int sentvec_similarity(const SentvecModel *h, const char *s1, const char *s2, double *out);

#ifdef __cplusplus
}
#endif

#endif
