#pragma once

#include <istream>
#include <memory>
#include <mutex>
#include <ostream>
#include <string>
#include <string_view>

#include <nlohmann/json.hpp>

#include "pico/backend.hpp"

namespace pico {

/// Newline-delimited JSON protocol for driving a Backend out of process.
///
/// Request:  {"protocol_version": 1, "id": N, "op": OP, "args": {...}}
/// Response: {"protocol_version": 1, "id": N, "ok": true, "result": {...}}
///       or  {"protocol_version": 1, "id": N|null, "ok": false, "error": "..."}
///
/// Grids travel as base64 PGRD. Multi-plane values (latents, images,
/// attention stacks) are a single planar PGRD: planes stacked vertically.
inline constexpr int bridge_protocol_version = 1;

namespace wire {

std::string encode_planes(std::span<const Grid2D> planes, GridRole role);
std::vector<Grid2D> decode_planes(std::string_view base64, std::size_t count);

nlohmann::json encode_latent(const LatentState& z);
LatentState decode_latent(const nlohmann::json& j);
nlohmann::json encode_image(const Image& image);
Image decode_image(const nlohmann::json& j);
nlohmann::json encode_stack(const AttentionStack& s);
AttentionStack decode_stack(const nlohmann::json& j);
nlohmann::json encode_descriptor(const BackendDescriptor& d);
BackendDescriptor decode_descriptor(const nlohmann::json& j);

} // namespace wire

/// Answers one request line. Never throws; protocol and backend failures
/// become error responses.
std::string handle_request(const Backend& backend, std::string_view line);

/// Serves requests until end of input.
void serve(const Backend& backend, std::istream& in, std::ostream& out);

/// Accepts connections on a Unix socket and serves them one at a time.
void serve_unix(const Backend& backend, const std::string& path);

/// One request/response exchange over some byte channel.
class Transport {
public:
    virtual ~Transport() = default;
    virtual std::string exchange(const std::string& line) = 0;
};

/// Spawns `/bin/sh -c command` and talks over its stdin/stdout.
std::unique_ptr<Transport> make_exec_transport(const std::string& command);
std::unique_ptr<Transport> make_unix_transport(const std::string& path);
/// Calls handle_request directly; for tests and transcripts.
std::unique_ptr<Transport> make_loopback_transport(const Backend& backend);

/// Backend whose every operation is a bridge request. Requests on one
/// instance are serialised.
class BridgeBackend final : public Backend {
public:
    explicit BridgeBackend(std::unique_ptr<Transport> transport);

    BackendDescriptor describe() const override;
    LatentState init_latent(std::uint64_t seed, int steps) const override;
    Condition encode(std::string_view text) const override;
    std::vector<AttentionStack> attention(const LatentState& z, const Condition& c) const override;
    LatentState update(const LatentState& z, const Condition& c, std::span<const AttentionStack> stacks) const override;
    Image decode(const LatentState& z) const override;
    Grid2D segment(const Image& image, std::string_view referent) const override;
    std::vector<double> embed_image(const Image& image) const override;
    std::vector<double> embed_text(std::string_view text) const override;

private:
    nlohmann::json call(std::string_view op, nlohmann::json args) const;

    std::unique_ptr<Transport> transport_;
    mutable std::mutex mutex_;
    mutable std::int64_t next_id_ = 1;
};

/// "toy", "bridge:exec:CMD", "bridge:unix:PATH" (or "bridge:PATH").
std::unique_ptr<Backend> make_backend(std::string_view spec);

} // namespace pico
