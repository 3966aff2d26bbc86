#pragma once

#include <string>

namespace eer {

/// (subject, trigger, object) phrase triple summarizing a headline's event.
struct EventTriple {
  std::string subject;
  std::string trigger;
  std::string object;

  bool complete() const { return !subject.empty() && !trigger.empty() && !object.empty(); }
  friend bool operator==(const EventTriple&, const EventTriple&) = default;
};

}  // namespace eer
