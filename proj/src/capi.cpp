#include "pangaea/pangaea.h"

#include <cstring>
#include <memory>
#include <string>

#include "json.hpp"
#include "pangaea/checkpoint.hpp"
#include "pangaea/error.hpp"
#include "pangaea/jobs.hpp"
#include "pangaea/metrics.hpp"
#include "pangaea/optim.hpp"
#include "pangaea/scaling.hpp"

struct pg_model {
  std::unique_ptr<pangaea::Model> model;
};

namespace {

using pangaea::Error;
using pangaea::ErrorKind;

thread_local std::string last_error;

pg_status status_of(ErrorKind kind) { return static_cast<pg_status>(static_cast<int>(kind) + 1); }

pg_status set_error(pg_status status, const std::string& message) {
  last_error = message;
  return status;
}

template <typename F>
pg_status guarded(F&& fn) {
  try {
    fn();
    last_error.clear();
    return PG_OK;
  } catch (const Error& e) {
    return set_error(status_of(e.kind()), e.what());
  } catch (const nlohmann::json::exception& e) {
    return set_error(PG_ERR_CONFIG, e.what());
  } catch (const std::bad_alloc&) {
    return set_error(PG_ERR_INTERNAL, "out of memory");
  } catch (const std::exception& e) {
    return set_error(PG_ERR_INTERNAL, e.what());
  } catch (...) {
    return set_error(PG_ERR_INTERNAL, "unknown failure");
  }
}

#define PG_REQUIRE_ARG(cond, msg) \
  if (!(cond)) return set_error(PG_ERR_ARGUMENT, msg)

pangaea::Sample make_sample(const char* modality, const double* values, const size_t* shape,
                            size_t rank) {
  auto kind = pangaea::parse_modality(modality);
  pangaea::require(kind.has_value(), ErrorKind::Config, std::string("unknown modality '") + modality + "'");
  pangaea::Shape s(shape, shape + rank);
  const std::size_t n = pangaea::shape_size(s);
  return {*kind, s, std::vector<double>(values, values + n)};
}

char* copy_string(const std::string& s) {
  char* out = static_cast<char*>(std::malloc(s.size() + 1));
  if (!out) throw std::bad_alloc();
  std::memcpy(out, s.c_str(), s.size() + 1);
  return out;
}

}  // namespace

extern "C" {

const char* pg_version(void) { return "0.1.0"; }

const char* pg_status_name(pg_status status) {
  if (status == PG_OK) return "ok";
  if (status == PG_ERR_ARGUMENT) return "argument";
  if (status == PG_ERR_INTERNAL) return "internal";
  if (status >= PG_ERR_DIMENSION && status <= PG_ERR_SHAPE)
    return pangaea::error_kind_name(static_cast<ErrorKind>(status - 1));
  return "unknown";
}

const char* pg_last_error(void) { return last_error.c_str(); }

pg_status pg_run_job(const char* request_json, char** result) {
  PG_REQUIRE_ARG(request_json && result, "request and result must not be null");
  *result = nullptr;
  return guarded([&] {
    nlohmann::json request;
    try {
      request = nlohmann::json::parse(request_json);
    } catch (const nlohmann::json::parse_error& e) {
      throw Error(ErrorKind::Parse, std::string("request is not valid JSON: ") + e.what());
    }
    *result = copy_string(pangaea::run_job(request).dump());
  });
}

void pg_string_free(char* s) { std::free(s); }

pg_status pg_model_create(const char* config_json, uint64_t seed, pg_model** out) {
  PG_REQUIRE_ARG(out, "out must not be null");
  *out = nullptr;
  return guarded([&] {
    auto config = config_json ? pangaea::model_config_from_json(nlohmann::json::parse(config_json))
                              : pangaea::ModelConfig::desk();
    *out = new pg_model{std::make_unique<pangaea::Model>(config, seed)};
  });
}

pg_status pg_model_load(const char* path, pg_model** out) {
  PG_REQUIRE_ARG(path && out, "path and out must not be null");
  *out = nullptr;
  return guarded([&] { *out = new pg_model{pangaea::load_checkpoint(path).model}; });
}

pg_status pg_model_save(const pg_model* model, const char* path) {
  PG_REQUIRE_ARG(model && path, "model and path must not be null");
  return guarded([&] { pangaea::save_checkpoint(path, *model->model); });
}

void pg_model_free(pg_model* model) { delete model; }

pg_status pg_model_param_count(const pg_model* model, size_t* count) {
  PG_REQUIRE_ARG(model && count, "model and count must not be null");
  return guarded([&] { *count = model->model->count_parameters(); });
}

pg_status pg_model_forward(const pg_model* model, const char* modality, const double* values,
                           const size_t* shape, size_t rank, uint64_t seed, double* out,
                           size_t capacity, size_t* rows, size_t* cols) {
  PG_REQUIRE_ARG(model && modality && values && shape && rows && cols,
                 "model, modality, values, shape, rows and cols must not be null");
  return guarded([&] {
    auto sample = make_sample(modality, values, shape, rank);
    auto set = pangaea::encode(sample, seed, model->model->config().vocab_size);
    auto hidden = model->model->forward(model->model->tokenize(set));
    *rows = hidden.rows();
    *cols = hidden.cols();
    if (!out) return;
    pangaea::require(capacity >= hidden.size(), ErrorKind::Capacity,
                     "output buffer holds " + std::to_string(capacity) + " values but " +
                         std::to_string(hidden.size()) + " are needed");
    std::copy(hidden.data().begin(), hidden.data().end(), out);
  });
}

pg_status pg_encode_count(const char* modality, const double* values, const size_t* shape,
                          size_t rank, uint64_t seed, size_t vocab_size, size_t* count) {
  PG_REQUIRE_ARG(modality && values && shape && count, "arguments must not be null");
  return guarded([&] {
    *count = pangaea::encode(make_sample(modality, values, shape, rank), seed, vocab_size).size();
  });
}

pg_status pg_fit_scaling(const double* x, const double* y, size_t n, double* p, double* c,
                         int* boundary) {
  PG_REQUIRE_ARG(x && y && p && c, "x, y, p and c must not be null");
  return guarded([&] {
    std::vector<pangaea::ScalingPoint> pts;
    for (size_t i = 0; i < n; ++i) pts.push_back({x[i], y[i]});
    auto fit = pangaea::fit_scaling(pts);
    *p = fit.p;
    *c = fit.c;
    if (boundary) *boundary = fit.boundary ? 1 : 0;
  });
}

pg_status pg_metric(const char* name, const double* y, const double* y_hat, size_t n,
                    double* value) {
  PG_REQUIRE_ARG(name && y && y_hat && value, "arguments must not be null");
  return guarded([&] {
    pangaea::EvalBatch b{std::vector<double>(y, y + n), std::vector<double>(y_hat, y_hat + n),
                         pangaea::TaskKind::Classification};
    const std::string m = name;
    if (m == "acc") *value = pangaea::metric_acc(b);
    else if (m == "f1") *value = pangaea::metric_f1(b).value;
    else if (m == "f1_weighted") *value = pangaea::metric_f1(b, pangaea::F1Average::Weighted).value;
    else if (m == "auc") {
      b.kind = pangaea::TaskKind::RankingScore;
      *value = pangaea::metric_auc(b);
    } else {
      b.kind = pangaea::TaskKind::Regression;
      if (m == "mse") *value = pangaea::metric_mse(b);
      else if (m == "mae") *value = pangaea::metric_mae(b);
      else if (m == "rmse") *value = pangaea::metric_rmse(b);
      else throw Error(ErrorKind::Config, "unknown metric '" + m + "'");
    }
  });
}

pg_status pg_improvement(double x, double x0, int higher_is_better, double* value) {
  PG_REQUIRE_ARG(value, "value must not be null");
  return guarded([&] {
    *value = pangaea::improvement(
        x, x0, higher_is_better ? pangaea::Direction::HigherBetter : pangaea::Direction::LowerBetter);
  });
}

pg_status pg_lr_at(size_t step, size_t total_steps, double warmup_ratio, size_t cycles,
                   double base_lr, double* lr) {
  PG_REQUIRE_ARG(lr, "lr must not be null");
  return guarded([&] {
    pangaea::ScheduleConfig s{total_steps, warmup_ratio, cycles};
    s.validate();
    *lr = pangaea::lr_at(step, s, base_lr);
  });
}

}  // extern "C"
