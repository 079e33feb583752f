#include <math.h>
#include <stdio.h>
#include <string.h>

#include "adalfl.h"

#define CHECK(cond)                                               \
  do {                                                            \
    if (!(cond)) {                                                \
      const char *msg = adalfl_last_error();                      \
      fprintf(stderr, "%s:%d: %s (%s)\n", __FILE__, __LINE__,     \
              #cond, msg ? msg : "no error message");             \
      return 1;                                                   \
    }                                                             \
  } while (0)

int main(void) {
  CHECK(strlen(adalfl_version()) > 0);
  CHECK(fabs(adalfl_smooth_leaky_relu(0.0, 0.01, 10.0) - 0.0686215709) < 1e-9);

  AdalflLossNet *net = NULL;
  CHECK(adalfl_loss_net_new(7, 8, ADALFL_LOSS_MODE_ADALFL, &net) == ADALFL_STATUS_OK);
  size_t count = 0;
  CHECK(adalfl_loss_net_param_count(net, &count) == ADALFL_STATUS_OK);
  CHECK(count == 2 * 8 + 8 + 8 * 8 + 8 + 8 + 1);

  double y[4] = {1.0, 0.0, 0.0, 1.0};
  double p[4] = {0.7, 0.3, 0.2, 0.8};
  double loss = 0.0, grad[4];
  CHECK(adalfl_loss_net_eval(net, y, p, 2, 2, &loss, grad) == ADALFL_STATUS_OK);
  CHECK(isfinite(loss));

  char *json = NULL;
  CHECK(adalfl_loss_net_to_json(net, &json) == ADALFL_STATUS_OK);
  AdalflLossNet *copy = NULL;
  CHECK(adalfl_loss_net_from_json(json, &copy) == ADALFL_STATUS_OK);
  adalfl_string_free(json);
  double again = 0.0;
  CHECK(adalfl_loss_net_eval(copy, y, p, 2, 2, &again, NULL) == ADALFL_STATUS_OK);
  CHECK(again == loss);

  CHECK(adalfl_loss_net_eval(net, y, p, 0, 2, &loss, NULL) == ADALFL_STATUS_INVALID_ARGUMENT);
  CHECK(adalfl_last_error() != NULL);
  CHECK(adalfl_loss_net_from_json("{", &copy) != ADALFL_STATUS_OK);

  adalfl_loss_net_free(copy);
  adalfl_loss_net_free(net);
  printf("ok\n");
  return 0;
}
