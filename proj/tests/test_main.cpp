#include <gtest/gtest.h>

#include "eer/util.hpp"

int main(int argc, char** argv) {
  ::testing::InitGoogleTest(&argc, argv);
  eer::configure_logging_from_env();
  if (!std::getenv("EER_LOG")) spdlog::set_level(spdlog::level::warn);
  return RUN_ALL_TESTS();
}
