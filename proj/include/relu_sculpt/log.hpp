#pragma once

namespace relu_sculpt {

/// Sets the spdlog level from RELU_SCULPT_LOG (error | info | debug); default info.
void init_logging_from_env();

}  // namespace relu_sculpt
