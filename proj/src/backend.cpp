#include "pico/backend.hpp"

namespace pico {

LatentState Backend::step(const LatentState& z, const Condition& c, const AttentionHook& hook) const
{
    auto stacks = attention(z, c);
    if (hook) {
        hook(z, stacks);
    }
    return update(z, c, stacks);
}

} // namespace pico
