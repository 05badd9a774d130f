#pragma once
// The 18-class gesture vocabulary (HaGRID v1 naming).

#include <array>
#include <string>
#include <string_view>

namespace handrawer::data {

inline constexpr int kGestureCount = 18;

inline constexpr std::array<std::string_view, kGestureCount> kGestureNames = {
    "call", "dislike", "fist",  "four", "like",           "mute",  "ok",    "one",    "palm",
    "peace", "peace_inverted", "rock", "stop", "stop_inverted", "three", "three2", "two_up", "two_up_inverted"};

// Index into kGestureNames. Accepts the canonical names plus the common
// aliases "thumbs_up" (like) and "thumbs_down" (dislike); anything else
// throws ValidationError.
int gesture_index(std::string_view label);
// Canonical spelling of a label or alias.
std::string canonical_gesture(std::string_view label);
bool is_gesture(std::string_view label);

}  // namespace handrawer::data
