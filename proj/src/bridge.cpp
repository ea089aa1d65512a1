#include "pico/bridge.hpp"

#include <cerrno>
#include <csignal>
#include <cstring>
#include <sstream>

#include <sys/socket.h>
#include <sys/un.h>
#include <sys/wait.h>
#include <unistd.h>

#include "pico/error.hpp"
#include "pico/grid_io.hpp"
#include "pico/toy_backend.hpp"

namespace pico {

using nlohmann::json;

namespace {

Error bridge_error(const std::string& message)
{
    return Error(ErrorKind::backend, "bridge: " + message);
}

const json& require(const json& j, const char* key)
{
    if (!j.is_object() || !j.contains(key)) {
        throw bridge_error(std::string("missing field '") + key + "'");
    }
    return j.at(key);
}

std::vector<std::uint8_t> planar_bytes(std::span<const Grid2D> planes, GridRole role)
{
    if (planes.empty()) {
        throw bridge_error("cannot encode zero planes");
    }
    const std::size_t h = planes.front().height();
    const std::size_t w = planes.front().width();
    std::vector<double> values;
    values.reserve(planes.size() * h * w);
    for (const auto& p : planes) {
        if (p.height() != h || p.width() != w) {
            throw bridge_error("planes differ in shape");
        }
        values.insert(values.end(), p.values().begin(), p.values().end());
    }
    return encode_pgrd(Grid2D(planes.size() * h, w, std::move(values), role));
}

/// Blocking line reader over a file descriptor.
class FdLines {
public:
    explicit FdLines(int fd) : fd_(fd) {}

    bool next(std::string& line)
    {
        for (;;) {
            if (auto nl = buffer_.find('\n'); nl != std::string::npos) {
                line = buffer_.substr(0, nl);
                buffer_.erase(0, nl + 1);
                return true;
            }
            char chunk[65536];
            const ssize_t n = ::read(fd_, chunk, sizeof chunk);
            if (n < 0 && errno == EINTR) {
                continue;
            }
            if (n <= 0) {
                return false;
            }
            buffer_.append(chunk, static_cast<std::size_t>(n));
        }
    }

private:
    int fd_;
    std::string buffer_;
};

void write_all(int fd, std::string_view data)
{
    while (!data.empty()) {
        const ssize_t n = ::write(fd, data.data(), data.size());
        if (n < 0 && errno == EINTR) {
            continue;
        }
        if (n <= 0) {
            throw bridge_error(std::string("write failed: ") + std::strerror(errno));
        }
        data.remove_prefix(static_cast<std::size_t>(n));
    }
}

class ExecTransport final : public Transport {
public:
    explicit ExecTransport(const std::string& command)
    {
        int to_child[2];
        int from_child[2];
        if (::pipe(to_child) != 0 || ::pipe(from_child) != 0) {
            throw bridge_error(std::string("pipe failed: ") + std::strerror(errno));
        }
        pid_ = ::fork();
        if (pid_ < 0) {
            throw bridge_error(std::string("fork failed: ") + std::strerror(errno));
        }
        if (pid_ == 0) {
            ::dup2(to_child[0], STDIN_FILENO);
            ::dup2(from_child[1], STDOUT_FILENO);
            ::close(to_child[0]);
            ::close(to_child[1]);
            ::close(from_child[0]);
            ::close(from_child[1]);
            ::execl("/bin/sh", "sh", "-c", command.c_str(), static_cast<char*>(nullptr));
            ::_exit(127);
        }
        ::close(to_child[0]);
        ::close(from_child[1]);
        in_ = to_child[1];
        out_ = from_child[0];
        lines_ = std::make_unique<FdLines>(out_);
    }

    ~ExecTransport() override
    {
        ::close(in_);
        ::close(out_);
        int status = 0;
        ::waitpid(pid_, &status, 0);
    }

    std::string exchange(const std::string& line) override
    {
        write_all(in_, line + "\n");
        std::string reply;
        if (!lines_->next(reply)) {
            throw bridge_error("server closed the connection");
        }
        return reply;
    }

private:
    pid_t pid_ = -1;
    int in_ = -1;
    int out_ = -1;
    std::unique_ptr<FdLines> lines_;
};

class UnixTransport final : public Transport {
public:
    explicit UnixTransport(const std::string& path)
    {
        fd_ = ::socket(AF_UNIX, SOCK_STREAM, 0);
        if (fd_ < 0) {
            throw bridge_error(std::string("socket failed: ") + std::strerror(errno));
        }
        sockaddr_un addr{};
        addr.sun_family = AF_UNIX;
        if (path.size() >= sizeof addr.sun_path) {
            ::close(fd_);
            throw bridge_error("socket path too long");
        }
        std::strncpy(addr.sun_path, path.c_str(), sizeof addr.sun_path - 1);
        if (::connect(fd_, reinterpret_cast<sockaddr*>(&addr), sizeof addr) != 0) {
            const std::string reason = std::strerror(errno);
            ::close(fd_);
            throw bridge_error("cannot connect to " + path + ": " + reason);
        }
        lines_ = std::make_unique<FdLines>(fd_);
    }

    ~UnixTransport() override { ::close(fd_); }

    std::string exchange(const std::string& line) override
    {
        write_all(fd_, line + "\n");
        std::string reply;
        if (!lines_->next(reply)) {
            throw bridge_error("server closed the connection");
        }
        return reply;
    }

private:
    int fd_ = -1;
    std::unique_ptr<FdLines> lines_;
};

class LoopbackTransport final : public Transport {
public:
    explicit LoopbackTransport(const Backend& backend) : backend_(&backend) {}

    std::string exchange(const std::string& line) override { return handle_request(*backend_, line); }

private:
    const Backend* backend_;
};

json response_error(const json& id, const std::string& message)
{
    return {{"protocol_version", bridge_protocol_version}, {"id", id}, {"ok", false}, {"error", message}};
}

std::vector<bool> layer_mask_of(const json& args)
{
    std::vector<bool> mask;
    if (args.contains("layer_mask")) {
        for (const auto& v : args.at("layer_mask")) {
            mask.push_back(v.get<bool>());
        }
    }
    return mask;
}

bool selected(const std::vector<bool>& mask, std::size_t layer)
{
    return mask.empty() || (layer < mask.size() && mask[layer]);
}

json dispatch(const Backend& backend, const std::string& op, const json& args)
{
    if (op == "describe") {
        return {{"descriptor", wire::encode_descriptor(backend.describe())}};
    }
    if (op == "init_latent") {
        return {{"latent", wire::encode_latent(backend.init_latent(require(args, "seed").get<std::uint64_t>(),
                                                                   require(args, "steps").get<int>()))}};
    }
    if (op == "step") {
        const LatentState z = wire::decode_latent(require(args, "latent"));
        const Condition c = backend.encode(require(args, "text").get<std::string>());
        const std::string phase = args.value("phase", "full");
        const auto mask = layer_mask_of(args);
        if (phase == "attention") {
            json stacks = json::array();
            for (const auto& s : backend.attention(z, c)) {
                if (selected(mask, s.layer)) {
                    stacks.push_back(wire::encode_stack(s));
                }
            }
            return {{"stacks", stacks}};
        }
        if (phase == "update") {
            auto stacks = backend.attention(z, c);
            std::size_t next = 0;
            const auto& given = require(args, "stacks");
            for (auto& s : stacks) {
                if (!selected(mask, s.layer)) {
                    continue;
                }
                if (next >= given.size()) {
                    throw bridge_error("fewer stacks than selected layers");
                }
                s = wire::decode_stack(given.at(next++));
            }
            if (next != given.size()) {
                throw bridge_error("more stacks than selected layers");
            }
            return {{"latent", wire::encode_latent(backend.update(z, c, stacks))}};
        }
        if (phase == "full") {
            return {{"latent", wire::encode_latent(backend.step(z, c))}};
        }
        throw bridge_error("unknown step phase '" + phase + "'");
    }
    if (op == "decode") {
        return {{"image", wire::encode_image(backend.decode(wire::decode_latent(require(args, "latent"))))}};
    }
    if (op == "segment") {
        const Image image = wire::decode_image(require(args, "image"));
        const Grid2D g = backend.segment(image, require(args, "referent").get<std::string>());
        return {{"logits", base64_encode(encode_pgrd(g))}};
    }
    if (op == "embed_image") {
        return {{"vector", backend.embed_image(wire::decode_image(require(args, "image")))}};
    }
    if (op == "embed_text") {
        return {{"vector", backend.embed_text(require(args, "text").get<std::string>())}};
    }
    throw bridge_error("unknown op '" + op + "'");
}

} // namespace

namespace wire {

std::string encode_planes(std::span<const Grid2D> planes, GridRole role)
{
    return base64_encode(planar_bytes(planes, role));
}

std::vector<Grid2D> decode_planes(std::string_view base64, std::size_t count)
{
    const Grid2D all = decode_pgrd(base64_decode(base64));
    if (count == 0 || all.height() % count != 0) {
        throw bridge_error("planar payload does not split into " + std::to_string(count) + " planes");
    }
    const std::size_t h = all.height() / count;
    const std::size_t w = all.width();
    std::vector<Grid2D> out;
    out.reserve(count);
    for (std::size_t i = 0; i < count; ++i) {
        const auto first = all.values().begin() + static_cast<std::ptrdiff_t>(i * h * w);
        out.emplace_back(h, w, std::vector<double>(first, first + static_cast<std::ptrdiff_t>(h * w)), all.role());
    }
    return out;
}

json encode_latent(const LatentState& z)
{
    return {{"timestep", z.timestep},
            {"total_steps", z.total_steps},
            {"seed", z.seed},
            {"channels", z.channels()},
            {"data", encode_planes(z.planes, GridRole::logit)}};
}

LatentState decode_latent(const json& j)
{
    LatentState z;
    z.timestep = require(j, "timestep").get<int>();
    z.total_steps = j.value("total_steps", 0);
    z.seed = require(j, "seed").get<std::uint64_t>();
    z.planes = decode_planes(require(j, "data").get<std::string>(), require(j, "channels").get<std::size_t>());
    return z;
}

json encode_image(const Image& image)
{
    return {{"channels", image.channels.size()}, {"data", encode_planes(image.channels, GridRole::probability)}};
}

Image decode_image(const json& j)
{
    Image img;
    img.channels = decode_planes(require(j, "data").get<std::string>(), require(j, "channels").get<std::size_t>());
    return img;
}

json encode_stack(const AttentionStack& s)
{
    return {{"layer", s.layer},
            {"timestep", s.timestep},
            {"tokens", s.maps.size()},
            {"data", encode_planes(s.maps, GridRole::attention)}};
}

AttentionStack decode_stack(const json& j)
{
    AttentionStack s;
    s.layer = require(j, "layer").get<std::size_t>();
    s.timestep = require(j, "timestep").get<int>();
    s.maps = decode_planes(require(j, "data").get<std::string>(), require(j, "tokens").get<std::size_t>());
    return s;
}

json encode_descriptor(const BackendDescriptor& d)
{
    json layers = json::array();
    for (const auto& r : d.attention_layers) {
        layers.push_back({r.height, r.width});
    }
    return {{"name", d.name},
            {"latent_channels", d.latent_channels},
            {"latent", {d.latent.height, d.latent.width}},
            {"image", {d.image.height, d.image.width}},
            {"attention_layers", layers},
            {"embedding_dim", d.embedding_dim},
            {"token_alignment", d.token_alignment}};
}

BackendDescriptor decode_descriptor(const json& j)
{
    auto res = [](const json& v) { return Resolution{v.at(0).get<std::size_t>(), v.at(1).get<std::size_t>()}; };
    BackendDescriptor d;
    d.name = require(j, "name").get<std::string>();
    d.latent_channels = require(j, "latent_channels").get<std::size_t>();
    d.latent = res(require(j, "latent"));
    d.image = res(require(j, "image"));
    for (const auto& l : require(j, "attention_layers")) {
        d.attention_layers.push_back(res(l));
    }
    d.embedding_dim = require(j, "embedding_dim").get<std::size_t>();
    d.token_alignment = j.value("token_alignment", "identity");
    return d;
}

} // namespace wire

std::string handle_request(const Backend& backend, std::string_view line)
{
    json request;
    try {
        request = json::parse(line);
    } catch (const json::exception& e) {
        return response_error(nullptr, std::string("malformed request: ") + e.what()).dump();
    }
    const json id = request.is_object() && request.contains("id") ? request.at("id") : json(nullptr);
    try {
        if (!request.is_object()) {
            throw bridge_error("request must be an object");
        }
        if (!request.contains("protocol_version")) {
            throw bridge_error("missing protocol_version");
        }
        if (request.at("protocol_version") != bridge_protocol_version) {
            throw bridge_error("unsupported protocol_version " + request.at("protocol_version").dump());
        }
        const std::string op = require(request, "op").get<std::string>();
        const json args = request.value("args", json::object());
        json result = dispatch(backend, op, args);
        return json{{"protocol_version", bridge_protocol_version}, {"id", id}, {"ok", true}, {"result", std::move(result)}}.dump();
    } catch (const std::exception& e) {
        return response_error(id, e.what()).dump();
    }
}

void serve(const Backend& backend, std::istream& in, std::ostream& out)
{
    std::string line;
    while (std::getline(in, line)) {
        if (line.empty()) {
            continue;
        }
        out << handle_request(backend, line) << '\n' << std::flush;
    }
}

void serve_unix(const Backend& backend, const std::string& path)
{
    const int listener = ::socket(AF_UNIX, SOCK_STREAM, 0);
    if (listener < 0) {
        throw bridge_error(std::string("socket failed: ") + std::strerror(errno));
    }
    sockaddr_un addr{};
    addr.sun_family = AF_UNIX;
    if (path.size() >= sizeof addr.sun_path) {
        ::close(listener);
        throw bridge_error("socket path too long");
    }
    std::strncpy(addr.sun_path, path.c_str(), sizeof addr.sun_path - 1);
    ::unlink(path.c_str());
    if (::bind(listener, reinterpret_cast<sockaddr*>(&addr), sizeof addr) != 0 || ::listen(listener, 4) != 0) {
        const std::string reason = std::strerror(errno);
        ::close(listener);
        throw bridge_error("cannot listen on " + path + ": " + reason);
    }
    for (;;) {
        const int conn = ::accept(listener, nullptr, nullptr);
        if (conn < 0) {
            if (errno == EINTR) {
                continue;
            }
            break;
        }
        FdLines lines(conn);
        std::string line;
        try {
            while (lines.next(line)) {
                if (!line.empty()) {
                    write_all(conn, handle_request(backend, line) + "\n");
                }
            }
        } catch (const Error&) {
            // Client went away mid-reply; keep serving others.
        }
        ::close(conn);
    }
    ::close(listener);
}

std::unique_ptr<Transport> make_exec_transport(const std::string& command)
{
    // A dead server must surface as a write error, not kill the client.
    std::signal(SIGPIPE, SIG_IGN);
    return std::make_unique<ExecTransport>(command);
}

std::unique_ptr<Transport> make_unix_transport(const std::string& path)
{
    std::signal(SIGPIPE, SIG_IGN);
    return std::make_unique<UnixTransport>(path);
}

std::unique_ptr<Transport> make_loopback_transport(const Backend& backend)
{
    return std::make_unique<LoopbackTransport>(backend);
}

BridgeBackend::BridgeBackend(std::unique_ptr<Transport> transport) : transport_(std::move(transport)) {}

json BridgeBackend::call(std::string_view op, json args) const
{
    std::lock_guard lock(mutex_);
    const std::int64_t id = next_id_++;
    const json request{{"protocol_version", bridge_protocol_version}, {"id", id}, {"op", op}, {"args", std::move(args)}};
    const std::string reply = transport_->exchange(request.dump());
    json response;
    try {
        response = json::parse(reply);
    } catch (const json::exception& e) {
        throw bridge_error(std::string("malformed response: ") + e.what());
    }
    if (!response.is_object() || response.value("id", json()) != json(id)) {
        throw bridge_error("response id does not match request " + std::to_string(id));
    }
    if (!response.value("ok", false)) {
        throw bridge_error(response.value("error", std::string("unspecified failure")));
    }
    return require(response, "result");
}

BackendDescriptor BridgeBackend::describe() const
{
    return wire::decode_descriptor(call("describe", json::object()).at("descriptor"));
}

LatentState BridgeBackend::init_latent(std::uint64_t seed, int steps) const
{
    return wire::decode_latent(call("init_latent", {{"seed", seed}, {"steps", steps}}).at("latent"));
}

Condition BridgeBackend::encode(std::string_view text) const
{
    // The server encodes from text on every request.
    Condition c;
    c.text = std::string(text);
    c.tokens = tokenize(text);
    return c;
}

std::vector<AttentionStack> BridgeBackend::attention(const LatentState& z, const Condition& c) const
{
    const json result = call("step", {{"latent", wire::encode_latent(z)}, {"text", c.text}, {"phase", "attention"}});
    std::vector<AttentionStack> stacks;
    for (const auto& s : result.at("stacks")) {
        stacks.push_back(wire::decode_stack(s));
    }
    return stacks;
}

LatentState BridgeBackend::update(const LatentState& z, const Condition& c, std::span<const AttentionStack> stacks) const
{
    json encoded = json::array();
    for (const auto& s : stacks) {
        encoded.push_back(wire::encode_stack(s));
    }
    const json result =
        call("step", {{"latent", wire::encode_latent(z)}, {"text", c.text}, {"phase", "update"}, {"stacks", std::move(encoded)}});
    return wire::decode_latent(result.at("latent"));
}

Image BridgeBackend::decode(const LatentState& z) const
{
    return wire::decode_image(call("decode", {{"latent", wire::encode_latent(z)}}).at("image"));
}

Grid2D BridgeBackend::segment(const Image& image, std::string_view referent) const
{
    const json result = call("segment", {{"image", wire::encode_image(image)}, {"referent", referent}});
    return decode_pgrd(base64_decode(result.at("logits").get<std::string>()));
}

std::vector<double> BridgeBackend::embed_image(const Image& image) const
{
    return call("embed_image", {{"image", wire::encode_image(image)}}).at("vector").get<std::vector<double>>();
}

std::vector<double> BridgeBackend::embed_text(std::string_view text) const
{
    return call("embed_text", {{"text", text}}).at("vector").get<std::vector<double>>();
}

std::unique_ptr<Backend> make_backend(std::string_view spec)
{
    if (spec == "toy") {
        return std::make_unique<ToyBackend>();
    }
    constexpr std::string_view prefix = "bridge:";
    if (!spec.starts_with(prefix)) {
        throw Error(ErrorKind::config, "unknown backend '" + std::string(spec) + "' (expected toy or bridge:ADDR)");
    }
    std::string_view addr = spec.substr(prefix.size());
    if (addr.starts_with("exec:")) {
        return std::make_unique<BridgeBackend>(make_exec_transport(std::string(addr.substr(5))));
    }
    if (addr.starts_with("unix:")) {
        addr.remove_prefix(5);
    }
    if (addr.empty()) {
        throw Error(ErrorKind::config, "bridge backend needs an address");
    }
    return std::make_unique<BridgeBackend>(make_unix_transport(std::string(addr)));
}

} // namespace pico
