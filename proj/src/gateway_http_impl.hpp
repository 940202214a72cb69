#pragma once

#include <thread>

#include <httplib.h>

#include "ricebot/gateway.hpp"

namespace ricebot::gateway {

struct Gateway::Http {
  httplib::Server server;
  std::thread thread;
};

}  // namespace ricebot::gateway
