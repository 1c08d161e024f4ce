#include "sgt/snapshot.hpp"

#include <cmath>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <sstream>

#include "sgt/errors.hpp"

namespace sgt {

namespace {

constexpr char kMagic[6] = {'S', 'G', 'T', 'V', '1', '\0'};

std::uint64_t fnv1a(const std::string& bytes, std::size_t count) {
    std::uint64_t h = 14695981039346656037ULL;
    for (std::size_t i = 0; i < count; ++i) {
        h ^= static_cast<unsigned char>(bytes[i]);
        h *= 1099511628211ULL;
    }
    return h;
}

void put_u64(std::string& buf, std::uint64_t v) {
    for (int b = 0; b < 8; ++b) buf.push_back(static_cast<char>((v >> (8 * b)) & 0xff));
}

void put_f64(std::string& buf, double x) {
    std::uint64_t v = 0;
    std::memcpy(&v, &x, sizeof v);
    put_u64(buf, v);
}

void put_array(std::string& buf, const std::vector<double>& vals) {
    for (double x : vals) put_f64(buf, x);
}

struct Cursor {
    const std::string& bytes;
    std::size_t pos = 0;

    std::uint64_t u64() {
        std::uint64_t v = 0;
        for (int b = 0; b < 8; ++b)
            v |= static_cast<std::uint64_t>(static_cast<unsigned char>(bytes[pos + b])) << (8 * b);
        pos += 8;
        return v;
    }
    double f64() {
        const std::uint64_t v = u64();
        double x = 0.0;
        std::memcpy(&x, &v, sizeof x);
        return x;
    }
    std::vector<double> array(std::size_t count) {
        std::vector<double> vals(count);
        for (std::size_t i = 0; i < count; ++i) vals[i] = f64();
        return vals;
    }
};

void atomic_write(const std::string& path, const std::string& bytes) {
    const std::string tmp = path + ".tmp";
    {
        std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
        if (!out) throw IOError("cannot open for writing: " + tmp);
        out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
        out.flush();
        if (!out) throw IOError("write failed: " + tmp);
    }
    std::error_code ec;
    std::filesystem::rename(tmp, path, ec);
    if (ec) throw IOError("rename failed: " + tmp + " -> " + path + ": " + ec.message());
}

ArrayDiff array_diff(const std::vector<double>& a, const std::vector<double>& b) {
    ArrayDiff d;
    double total = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) {
        const double x = std::abs(a[i] - b[i]);
        d.sup = std::max(d.sup, x);
        total += x;
    }
    d.mean_abs = a.empty() ? 0.0 : total / static_cast<double>(a.size());
    return d;
}

} // namespace

std::string snapshot_bytes(const StepState& state) {
    const GridSpec g = state.field.grid();
    std::string buf;
    const std::size_t count = static_cast<std::size_t>(g.n) * g.n;
    buf.reserve(6 + 1 + 8 + 8 + 4 * count * 8 + 5 * 8 + 8);
    buf.append(kMagic, sizeof kMagic);
    buf.push_back(state.model == Model::SG ? '\0' : '\1');
    put_u64(buf, static_cast<std::uint64_t>(g.n));
    put_f64(buf, state.t);
    put_array(buf, state.field.samples());
    put_array(buf, state.flow.w1.samples());
    put_array(buf, state.flow.w2.samples());
    put_array(buf, state.det_check.samples());
    put_f64(buf, state.monitors.nu_sup);
    put_f64(buf, state.monitors.convexity_min);
    put_f64(buf, state.monitors.step_increment);
    put_f64(buf, state.monitors.det_err);
    put_f64(buf, state.monitors.mass);
    put_u64(buf, fnv1a(buf, buf.size()));
    return buf;
}

void write_snapshot(const StepState& state, const std::string& path) {
    atomic_write(path, snapshot_bytes(state));
}

StepState read_snapshot(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw IOError("cannot open snapshot: " + path);
    std::ostringstream buf;
    buf << in.rdbuf();
    const std::string bytes = buf.str();

    if (bytes.size() < sizeof kMagic + 1 + 8 + 8 + 5 * 8 + 8) {
        throw ChecksumMismatch("snapshot truncated: " + path);
    }
    if (std::memcmp(bytes.data(), kMagic, sizeof kMagic) != 0) {
        throw VersionMismatch("bad magic in snapshot: " + path);
    }

    Cursor cur{bytes, sizeof kMagic};
    const unsigned char model_byte = static_cast<unsigned char>(bytes[cur.pos++]);
    const std::uint64_t n64 = cur.u64();
    if (model_byte > 1) throw VersionMismatch("unknown model byte in snapshot: " + path);
    if (n64 < 8 || n64 > 1024 || n64 % 2 != 0) {
        throw VersionMismatch("implausible grid size in snapshot header: " + path);
    }
    const int n = static_cast<int>(n64);
    const std::size_t count = static_cast<std::size_t>(n) * n;
    const std::size_t expected = sizeof kMagic + 1 + 8 + 8 + 4 * count * 8 + 5 * 8 + 8;
    if (bytes.size() != expected) {
        std::ostringstream os;
        os << "snapshot size " << bytes.size() << " does not match expected " << expected << ": "
           << path;
        throw ChecksumMismatch(os.str());
    }
    Cursor tail{bytes, expected - 8};
    const std::uint64_t stored = tail.u64();
    const std::uint64_t computed = fnv1a(bytes, expected - 8);
    if (stored != computed) throw ChecksumMismatch("checksum mismatch: " + path);

    StepState s;
    s.model = model_byte == 0 ? Model::SG : Model::SGSW;
    s.t = cur.f64();
    const GridSpec g(n);
    s.field = Field(g, cur.array(count));
    Field w1(g, cur.array(count));
    Field w2(g, cur.array(count));
    s.det_check = Field(g, cur.array(count));
    s.monitors.nu_sup = cur.f64();
    s.monitors.convexity_min = cur.f64();
    s.monitors.step_increment = cur.f64();
    s.monitors.det_err = cur.f64();
    s.monitors.mass = cur.f64();
    s.flow = PeriodicMap{std::move(w1), std::move(w2)};
    s.flow_inv = invert_map(s.flow);
    return s;
}

SnapshotDiff snapshot_diff(const StepState& a, const StepState& b) {
    if (a.field.grid().n != b.field.grid().n) {
        throw std::invalid_argument("snapshot diff needs matching grids");
    }
    SnapshotDiff d;
    d.field = array_diff(a.field.samples(), b.field.samples());
    d.flow_w1 = array_diff(a.flow.w1.samples(), b.flow.w1.samples());
    d.flow_w2 = array_diff(a.flow.w2.samples(), b.flow.w2.samples());
    d.det_check = array_diff(a.det_check.samples(), b.det_check.samples());
    d.t_abs = std::abs(a.t - b.t);
    return d;
}

std::string render_monitor_csv(const std::vector<StepRecord>& series) {
    std::ostringstream os;
    os << "step,t,det_err,convexity_min,nu_sup,increment,mass\n";
    os << std::setprecision(17);
    for (const auto& r : series) {
        os << r.step << ',' << r.t << ',' << r.monitors.det_err << ',' << r.monitors.convexity_min
           << ',' << r.monitors.nu_sup << ',' << r.monitors.step_increment << ','
           << r.monitors.mass << '\n';
    }
    return os.str();
}

void write_monitor_csv(const std::vector<StepRecord>& series, const std::string& path) {
    atomic_write(path, render_monitor_csv(series));
}

} // namespace sgt
