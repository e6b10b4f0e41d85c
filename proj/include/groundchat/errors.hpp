#pragma once

#include <stdexcept>
#include <string>

namespace groundchat {

// Base of every error the library throws. `kind()` is a short stable tag
// used by the CLI and the HTTP service to pick exit codes / status codes.
class Error : public std::runtime_error {
 public:
  Error(std::string kind, const std::string& what)
      : std::runtime_error(what), kind_(std::move(kind)) {}
  const std::string& kind() const noexcept { return kind_; }

 private:
  std::string kind_;
};

#define GROUNDCHAT_DEFINE_ERROR(Name, tag)                                  \
  class Name : public Error {                                              \
   public:                                                                 \
    explicit Name(const std::string& what) : Error(tag, what) {}           \
  };

GROUNDCHAT_DEFINE_ERROR(ParseError, "parse")
GROUNDCHAT_DEFINE_ERROR(IntegrityError, "integrity")
GROUNDCHAT_DEFINE_ERROR(BackendError, "backend")
GROUNDCHAT_DEFINE_ERROR(CapabilityError, "capability")
GROUNDCHAT_DEFINE_ERROR(DomainError, "domain")
GROUNDCHAT_DEFINE_ERROR(ContractError, "contract")
GROUNDCHAT_DEFINE_ERROR(LengthError, "length")
GROUNDCHAT_DEFINE_ERROR(BudgetError, "budget")
GROUNDCHAT_DEFINE_ERROR(ValidationError, "validation")
GROUNDCHAT_DEFINE_ERROR(NotFoundError, "not_found")
GROUNDCHAT_DEFINE_ERROR(DivergenceError, "divergence")

#undef GROUNDCHAT_DEFINE_ERROR

}  // namespace groundchat
