#pragma once

#include <stdexcept>
#include <string>

namespace l2e {

// Base of every error raised by the library. The kind tag lets the CLI map
// failures to messages without a dynamic_cast ladder.
class Error : public std::runtime_error {
 public:
  enum class Kind { config, shape, data, numerical, state, parse, format, io };

  Error(Kind kind, const std::string& what) : std::runtime_error(what), kind_(kind) {}

  Kind kind() const noexcept { return kind_; }

 private:
  Kind kind_;
};

#define L2E_DEFINE_ERROR(Name, KindTag)                                      \
  class Name : public Error {                                                \
   public:                                                                   \
    explicit Name(const std::string& what) : Error(Kind::KindTag, what) {}   \
  };

L2E_DEFINE_ERROR(ConfigError, config)
L2E_DEFINE_ERROR(ShapeError, shape)
L2E_DEFINE_ERROR(DataError, data)
L2E_DEFINE_ERROR(NumericalError, numerical)
L2E_DEFINE_ERROR(StateError, state)
L2E_DEFINE_ERROR(ParseError, parse)
L2E_DEFINE_ERROR(FormatError, format)
L2E_DEFINE_ERROR(IoError, io)

#undef L2E_DEFINE_ERROR

inline const char* kind_name(Error::Kind kind) {
  switch (kind) {
    case Error::Kind::config: return "configuration error";
    case Error::Kind::shape: return "shape error";
    case Error::Kind::data: return "data error";
    case Error::Kind::numerical: return "numerical error";
    case Error::Kind::state: return "state error";
    case Error::Kind::parse: return "parse error";
    case Error::Kind::format: return "format error";
    case Error::Kind::io: return "io error";
  }
  return "error";
}

}  // namespace l2e
