#pragma once

// Error codes shared by every module, and a small value-or-error carrier.
//
// Protocol-level failures (a stale event, an epoch conflict at the registry)
// are ordinary outcomes in this system, so they travel as values. Exceptions
// are reserved for I/O and programming errors.

#include <optional>
#include <string>
#include <string_view>
#include <utility>
#include <variant>

namespace climanic {

enum class Errc {
  // session-model
  stale_event,
  out_of_bounds,
  empty_group,
  unknown_requester,
  // registry-service
  unknown_course,
  duplicate_address,
  group_inactive,
  duplicate_participant,
  unknown_group,
  not_a_member,
  not_controller,
  epoch_conflict,
  // peer-protocol
  manifest_mismatch,
  leader_unreachable,
  not_leader,
  unknown_target,
  target_unreachable,
  message_too_large,
  leader_must_transfer,
  // event-logger
  storage_full,
  corrupt_log,
  gap_detected,
  // sim / cli / plumbing
  scenario_invalid,
  invalid_argument,
  protocol_error,
  io_error,
  corrupt_state,
  bind_failure,
};

std::string_view to_string(Errc code) noexcept;
std::optional<Errc> errc_from_string(std::string_view name) noexcept;

struct Error {
  Errc code;
  std::string message;

  friend bool operator==(const Error& a, const Error& b) { return a.code == b.code; }
};

inline Error make_error(Errc code, std::string message = {}) {
  return Error{code, std::move(message)};
}

template <typename T>
class [[nodiscard]] Result {
 public:
  Result(T value) : v_(std::move(value)) {}  // NOLINT(google-explicit-constructor)
  Result(Error err) : v_(std::move(err)) {}  // NOLINT(google-explicit-constructor)

  bool ok() const noexcept { return v_.index() == 0; }
  explicit operator bool() const noexcept { return ok(); }

  T& value() & { return std::get<0>(v_); }
  const T& value() const& { return std::get<0>(v_); }
  T&& value() && { return std::get<0>(std::move(v_)); }

  const Error& error() const { return std::get<1>(v_); }
  Errc code() const { return error().code; }

  T* operator->() { return &value(); }
  const T* operator->() const { return &value(); }
  T& operator*() & { return value(); }
  const T& operator*() const& { return value(); }

 private:
  std::variant<T, Error> v_;
};

template <>
class [[nodiscard]] Result<void> {
 public:
  Result() = default;
  Result(Error err) : err_(std::move(err)) {}  // NOLINT(google-explicit-constructor)

  bool ok() const noexcept { return !err_.has_value(); }
  explicit operator bool() const noexcept { return ok(); }
  const Error& error() const { return *err_; }
  Errc code() const { return err_->code; }

 private:
  std::optional<Error> err_;
};

}  // namespace climanic
