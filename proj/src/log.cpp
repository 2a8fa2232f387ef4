#include "relu_sculpt/log.hpp"

#include <cstdlib>
#include <string>

#include <spdlog/sinks/stdout_color_sinks.h>
#include <spdlog/spdlog.h>

namespace relu_sculpt {

void init_logging_from_env() {
  if (!spdlog::get("relu_sculpt")) spdlog::set_default_logger(spdlog::stderr_color_mt("relu_sculpt"));
  spdlog::set_pattern("[%H:%M:%S] [%^%l%$] %v");
  const char* env = std::getenv("RELU_SCULPT_LOG");
  const std::string level = env ? env : "info";
  if (level == "error") {
    spdlog::set_level(spdlog::level::err);
  } else if (level == "debug") {
    spdlog::set_level(spdlog::level::debug);
  } else {
    spdlog::set_level(spdlog::level::info);
  }
}

}  // namespace relu_sculpt
