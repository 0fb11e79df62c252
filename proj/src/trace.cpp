#include "aaud/trace.hpp"

#include "aaud/error.hpp"

namespace aaud {

const LayerTrace& TraceSet::get(Condition c) const {
  const auto& t = traces[index_of(c)];
  if (!t) {
    fail(ErrorCode::missing_condition,
         instance_id + ": no layer trace for condition " + std::string(to_string(c)));
  }
  return *t;
}

}  // namespace aaud
