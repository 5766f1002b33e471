#include <stdio.h>
#include <string.h>

#include "ttogm.h"

#define CHECK(cond)                                                    \
  do {                                                                 \
    if (!(cond)) {                                                     \
      const char *e = ttogm_last_error();                              \
      fprintf(stderr, "%s:%d: %s (%s)\n", __FILE__, __LINE__, #cond,   \
              e ? e : "no error");                                     \
      return 1;                                                        \
    }                                                                  \
  } while (0)

int main(int argc, char **argv) {
  if (argc < 2) {
    fprintf(stderr, "usage: smoke <scratch dir>\n");
    return 2;
  }
  printf("ttogm %s\n", ttogm_version());

  /* a 12 x 5 wall with a one-cell gap */
  uint8_t codes[60];
  memset(codes, 0, sizeof codes);
  for (int c = 0; c < 11; c++)
    if (c != 5) codes[2 * 12 + c] = 100;
  TtogmMapInfo info = {12, 5, 0.05, 0.0, 0.0};
  TtogmMap *map = NULL;
  CHECK(ttogm_map_from_codes(&info, codes, &map) == TTOGM_OK);

  TtogmMap *clean = NULL;
  CHECK(ttogm_map_clean(map, "morph", &clean) == TTOGM_OK);
  CHECK(ttogm_map_codes(clean)[2 * 12 + 5] == 100);

  double v = 0.0;
  CHECK(ttogm_map_iou(map, map, TTOGM_IOU_OCCUPIED, &v) == TTOGM_OK && v == 1.0);

  char path[4096];
  snprintf(path, sizeof path, "%s/clean.pgm", argv[1]);
  CHECK(ttogm_map_write(clean, path) == TTOGM_OK);
  TtogmMap *back = NULL;
  CHECK(ttogm_map_read(path, &back) == TTOGM_OK);
  TtogmMapInfo got;
  CHECK(ttogm_map_info(back, &got) == TTOGM_OK && got.width == 12 && got.height == 5);

  /* errors carry a status and a message */
  TtogmMap *none = NULL;
  CHECK(ttogm_map_read("/nonexistent/map.pgm", &none) == TTOGM_ERR_IO && none == NULL);
  CHECK(ttogm_last_error() != NULL);
  CHECK(ttogm_map_clean(map, "model:/nonexistent.onnx", &none) == TTOGM_ERR_MODEL);

  TtogmMapper *mapper = NULL;
  CHECK(ttogm_mapper_new("[gicp]\nknn = 0\n", &mapper) == TTOGM_ERR_INVALID_CONFIG && mapper == NULL);
  CHECK(ttogm_mapper_new(NULL, &mapper) == TTOGM_OK);
  CHECK(ttogm_mapper_scan_count(mapper) == 0);
  ttogm_mapper_free(mapper);

  ttogm_map_free(back);
  ttogm_map_free(clean);
  ttogm_map_free(map);
  ttogm_map_free(NULL);
  printf("ok\n");
  return 0;
}
