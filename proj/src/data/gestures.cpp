#include "handrawer/data/gestures.hpp"

#include <algorithm>

#include "handrawer/core/errors.hpp"

namespace handrawer::data {

namespace {

int lookup(std::string_view label) {
    if (label == "thumbs_up") label = "like";
    if (label == "thumbs_down") label = "dislike";
    auto it = std::find(kGestureNames.begin(), kGestureNames.end(), label);
    return it == kGestureNames.end() ? -1 : static_cast<int>(it - kGestureNames.begin());
}

}  // namespace

int gesture_index(std::string_view label) {
    const int i = lookup(label);
    if (i < 0) throw ValidationError("unknown gesture label '" + std::string(label) + "'");
    return i;
}

std::string canonical_gesture(std::string_view label) {
    return std::string(kGestureNames[static_cast<std::size_t>(gesture_index(label))]);
}

bool is_gesture(std::string_view label) { return lookup(label) >= 0; }

}  // namespace handrawer::data
