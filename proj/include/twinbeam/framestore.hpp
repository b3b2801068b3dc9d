#pragma once

#include <algorithm>
#include <bit>
#include <charconv>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <iterator>
#include <optional>
#include <sstream>
#include <string>
#include <string_view>
#include <vector>

#include <unistd.h>
#include <zlib.h>

#include "detector.hpp"
#include "errors.hpp"

namespace twinbeam {

/*!
 * Binary frame file: one shot, signal region then idler region.
 *
 * All integers and doubles are little endian; see docs/frame_format.md.
 */
inline constexpr char frame_magic[8] = {'T', 'W', 'B', 'F', 'R', 'A', 'M', 'E'};
inline constexpr std::uint32_t frame_version = 1;
inline constexpr std::uint32_t endian_marker = 0x01020304u;
inline constexpr std::size_t frame_header_size = 256;

namespace detail {
class ByteWriter
{
  public:
    template<class T>
    void put(T v)
    {
        static_assert(std::is_trivially_copyable_v<T>);
        unsigned char b[sizeof(T)];
        std::memcpy(b, &v, sizeof(T));
        if constexpr (std::endian::native == std::endian::big)
            std::reverse(b, b + sizeof(T));
        buf_.insert(buf_.end(), b, b + sizeof(T));
    }
    void raw(void const* p, std::size_t n)
    {
        auto const* c = static_cast<unsigned char const*>(p);
        buf_.insert(buf_.end(), c, c + n);
    }
    void pad_to(std::size_t n) { buf_.resize(n, 0); }
    std::vector<unsigned char>& bytes() noexcept { return buf_; }

  private:
    std::vector<unsigned char> buf_;
};

class ByteReader
{
  public:
    ByteReader(unsigned char const* p, std::size_t n) : p_(p), n_(n) {}

    template<class T>
    T get()
    {
        if (pos_ + sizeof(T) > n_)
            throw FrameFileError(FrameFileError::Kind::truncated,
                                 "frame file header is truncated");
        unsigned char b[sizeof(T)];
        std::memcpy(b, p_ + pos_, sizeof(T));
        if constexpr (std::endian::native == std::endian::big)
            std::reverse(b, b + sizeof(T));
        pos_ += sizeof(T);
        T v;
        std::memcpy(&v, b, sizeof(T));
        return v;
    }

  private:
    unsigned char const* p_;
    std::size_t n_;
    std::size_t pos_ = 0;
};

inline std::uint32_t crc32_of(unsigned char const* p, std::size_t n)
{
    uLong crc = crc32(0L, Z_NULL, 0);
    while (n > 0)
    {
        auto chunk = static_cast<uInt>(std::min<std::size_t>(n, 1u << 30));
        crc = crc32(crc, p, chunk);
        p += chunk;
        n -= chunk;
    }
    return static_cast<std::uint32_t>(crc);
}

inline void put_meta(ByteWriter& w, FrameMeta const& m)
{
    w.put<std::uint8_t>(m.region == Region::signal ? 0 : 1);
    w.put<std::uint8_t>(m.background ? 1 : 0);
    w.put<std::uint16_t>(0);
    w.put<std::int32_t>(m.binning);
    w.put<std::int32_t>(m.dropped_cols);
    w.put<std::int32_t>(m.dropped_rows);
    w.put<std::uint64_t>(m.seed.master_seed);
    w.put<std::uint64_t>(m.seed.shot_index);
    w.put<double>(m.gain);
    w.put<double>(m.eta);
    w.put<double>(m.sigma_b);
    w.put<double>(m.pixel_pitch);
    w.put<double>(m.center_x);
    w.put<double>(m.center_y);
    w.put<double>(m.wigner_modes);
}

inline FrameMeta get_meta(ByteReader& r)
{
    FrameMeta m;
    auto region = r.get<std::uint8_t>();
    if (region > 1)
        throw FrameFileError(FrameFileError::Kind::parse,
                             "invalid region label in frame header");
    m.region = region == 0 ? Region::signal : Region::idler;
    m.background = r.get<std::uint8_t>() != 0;
    r.get<std::uint16_t>();
    m.binning = r.get<std::int32_t>();
    m.dropped_cols = r.get<std::int32_t>();
    m.dropped_rows = r.get<std::int32_t>();
    m.seed.master_seed = r.get<std::uint64_t>();
    m.seed.shot_index = r.get<std::uint64_t>();
    m.gain = r.get<double>();
    m.eta = r.get<double>();
    m.sigma_b = r.get<double>();
    m.pixel_pitch = r.get<double>();
    m.center_x = r.get<double>();
    m.center_y = r.get<double>();
    m.wigner_modes = r.get<double>();
    return m;
}
}  // namespace detail

//! Serialize a frame pair to the binary layout
inline std::vector<unsigned char> encode_frames(FramePair const& fp)
{
    if (fp.signal.width() != fp.idler.width()
        || fp.signal.height() != fp.idler.height())
        throw FrameFileError(FrameFileError::Kind::parse,
                             "signal and idler regions must be congruent");
    detail::ByteWriter payload;
    for (auto const* f : {&fp.signal, &fp.idler})
        for (double v : f->data())
            payload.put<double>(v);
    auto& pb = payload.bytes();

    detail::ByteWriter w;
    w.raw(frame_magic, sizeof(frame_magic));
    w.put<std::uint32_t>(frame_version);
    w.put<std::uint32_t>(endian_marker);
    w.put<std::uint32_t>(static_cast<std::uint32_t>(frame_header_size));
    w.put<std::uint32_t>(static_cast<std::uint32_t>(fp.signal.width()));
    w.put<std::uint32_t>(static_cast<std::uint32_t>(fp.signal.height()));
    w.put<std::uint32_t>(0);
    w.put<std::uint64_t>(pb.size());
    w.put<std::uint32_t>(detail::crc32_of(pb.data(), pb.size()));
    w.put<std::uint32_t>(0);
    detail::put_meta(w, fp.signal.meta());
    detail::put_meta(w, fp.idler.meta());
    w.pad_to(frame_header_size - 4);
    auto& hb = w.bytes();
    w.put<std::uint32_t>(detail::crc32_of(hb.data(), hb.size()));
    hb.insert(hb.end(), pb.begin(), pb.end());
    return std::move(hb);
}

inline FramePair decode_frames(std::vector<unsigned char> const& bytes)
{
    using Kind = FrameFileError::Kind;
    if (bytes.size() < sizeof(frame_magic) + 4)
        throw FrameFileError(Kind::truncated, "frame file is truncated");
    if (std::memcmp(bytes.data(), frame_magic, sizeof(frame_magic)) != 0)
        throw FrameFileError(Kind::bad_magic, "not a twin-beam frame file");
    detail::ByteReader r(bytes.data() + sizeof(frame_magic),
                         bytes.size() - sizeof(frame_magic));
    auto version = r.get<std::uint32_t>();
    if (version != frame_version)
    {
        std::ostringstream os;
        os << "unsupported frame file version " << version << " (expected "
           << frame_version << ")";
        throw FrameFileError(Kind::version, os.str());
    }
    if (bytes.size() < frame_header_size)
        throw FrameFileError(Kind::truncated, "frame file header is truncated");
    if (r.get<std::uint32_t>() != endian_marker)
        throw FrameFileError(Kind::parse, "bad endianness marker");
    auto header_size = r.get<std::uint32_t>();
    if (header_size != frame_header_size)
        throw FrameFileError(Kind::parse, "unexpected header size");
    detail::ByteReader tail(bytes.data() + frame_header_size - 4, 4);
    if (tail.get<std::uint32_t>()
        != detail::crc32_of(bytes.data(), frame_header_size - 4))
        throw FrameFileError(Kind::checksum, "frame header checksum mismatch");

    auto width = r.get<std::uint32_t>();
    auto height = r.get<std::uint32_t>();
    r.get<std::uint32_t>();
    auto payload_size = r.get<std::uint64_t>();
    auto payload_crc = r.get<std::uint32_t>();
    r.get<std::uint32_t>();
    auto ms = detail::get_meta(r);
    auto mi = detail::get_meta(r);
    std::uint64_t expected = std::uint64_t{2} * width * height * sizeof(double);
    if (width == 0 || height == 0 || payload_size != expected)
        throw FrameFileError(Kind::parse, "inconsistent frame shape in header");
    if (bytes.size() - frame_header_size < payload_size)
        throw FrameFileError(Kind::truncated, "frame file payload is truncated");
    if (bytes.size() - frame_header_size > payload_size)
        throw FrameFileError(Kind::parse, "trailing bytes after frame payload");
    unsigned char const* p = bytes.data() + frame_header_size;
    if (detail::crc32_of(p, payload_size) != payload_crc)
        throw FrameFileError(Kind::checksum, "frame payload checksum mismatch");

    FramePair fp{DetectorFrame(static_cast<int>(width),
                               static_cast<int>(height), ms),
                 DetectorFrame(static_cast<int>(width),
                               static_cast<int>(height), mi)};
    detail::ByteReader pr(p, payload_size);
    for (auto* f : {&fp.signal, &fp.idler})
        for (double& v : f->data())
            v = pr.get<double>();
    return fp;
}

//! Write atomically: a temporary file is renamed over the target
inline void write_frames(FramePair const& fp, std::filesystem::path const& path)
{
    auto bytes = encode_frames(fp);
    auto tmp = path;
    tmp += ".tmp" + std::to_string(::getpid());
    {
        std::ofstream os(tmp, std::ios::binary | std::ios::trunc);
        if (!os)
            throw FrameFileError(FrameFileError::Kind::io,
                                 "cannot open " + tmp.string() + " for writing");
        os.write(reinterpret_cast<char const*>(bytes.data()),
                 static_cast<std::streamsize>(bytes.size()));
        if (!os)
            throw FrameFileError(FrameFileError::Kind::io,
                                 "write failed for " + tmp.string());
    }
    std::error_code ec;
    std::filesystem::rename(tmp, path, ec);
    if (ec)
        throw FrameFileError(FrameFileError::Kind::io,
                             "cannot rename onto " + path.string() + ": "
                                 + ec.message());
}

inline FramePair read_frames(std::filesystem::path const& path)
{
    std::ifstream is(path, std::ios::binary);
    if (!is)
        throw FrameFileError(FrameFileError::Kind::io,
                             "cannot open " + path.string());
    std::vector<unsigned char> bytes((std::istreambuf_iterator<char>(is)),
                                     std::istreambuf_iterator<char>());
    return decode_frames(bytes);
}

//---------------------------------------------------------------------------//
// CSV bridge for externally acquired frames
//---------------------------------------------------------------------------//
struct CsvMetadata
{
    std::optional<double> pixel_pitch;  //!< mandatory
    double sigma_b = 0;  //!< nonzero marks the frames as background-included
    std::optional<double> center_x;  //!< default: geometric center
    std::optional<double> center_y;
    double eta = 1;
    double gain = 0;
};

namespace detail {
inline std::vector<std::vector<double>>
parse_csv_rows(std::istream& is, std::string const& name, int& line_no)
{
    std::vector<std::vector<double>> rows;
    std::string line;
    while (std::getline(is, line))
    {
        ++line_no;
        if (!line.empty() && line.back() == '\r')
            line.pop_back();
        if (line.find_first_not_of(" \t") == std::string::npos)
        {
            if (rows.empty())
                continue;
            break;  // blank line ends a block
        }
        std::vector<double> row;
        std::string_view sv(line);
        std::size_t col = 0;
        while (true)
        {
            auto comma = sv.find(',');
            auto cell = sv.substr(0, comma);
            auto b = cell.find_first_not_of(" \t");
            auto e = cell.find_last_not_of(" \t");
            ++col;
            double v = 0;
            bool ok = b != std::string_view::npos;
            if (ok)
            {
                cell = cell.substr(b, e - b + 1);
                auto res = std::from_chars(cell.data(),
                                           cell.data() + cell.size(), v);
                ok = res.ec == std::errc() && res.ptr == cell.data() + cell.size();
            }
            if (!ok)
            {
                std::ostringstream os;
                os << name << ": non-numeric cell at row " << line_no
                   << ", column " << col;
                throw FrameFileError(FrameFileError::Kind::parse, os.str());
            }
            row.push_back(v);
            if (comma == std::string_view::npos)
                break;
            sv.remove_prefix(comma + 1);
        }
        if (!rows.empty() && row.size() != rows.front().size())
        {
            std::ostringstream os;
            os << name << ": ragged row " << line_no << " has " << row.size()
               << " columns, expected " << rows.front().size();
            throw FrameFileError(FrameFileError::Kind::parse, os.str());
        }
        rows.push_back(std::move(row));
    }
    return rows;
}

inline DetectorFrame frame_from_rows(std::vector<std::vector<double>> const& rows,
                                     CsvMetadata const& md,
                                     Region region,
                                     std::string const& name)
{
    if (rows.empty())
        throw FrameFileError(FrameFileError::Kind::parse,
                             name + ": no numeric rows");
    FrameMeta m;
    m.region = region;
    m.pixel_pitch = *md.pixel_pitch;
    m.sigma_b = md.sigma_b;
    m.background = md.sigma_b > 0;
    m.eta = md.eta;
    m.gain = md.gain;
    int w = static_cast<int>(rows.front().size());
    int h = static_cast<int>(rows.size());
    m.center_x = md.center_x ? *md.center_x : 0.5 * (w - 1);
    m.center_y = md.center_y ? *md.center_y : 0.5 * (h - 1);
    DetectorFrame f(w, h, m);
    for (int y = 0; y < h; ++y)
        for (int x = 0; x < w; ++x)
            f(x, y) = rows[y][x];
    return f;
}

inline void require_metadata(CsvMetadata const& md)
{
    if (!md.pixel_pitch || !(*md.pixel_pitch > 0))
        throw FrameFileError(FrameFileError::Kind::parse,
                             "missing mandatory metadata: pixel_pitch");
}
}  // namespace detail

//! Two files, one region each
inline FramePair import_csv(std::filesystem::path const& signal_path,
                            std::filesystem::path const& idler_path,
                            CsvMetadata const& md)
{
    detail::require_metadata(md);
    FramePair fp;
    for (int k = 0; k < 2; ++k)
    {
        auto const& path = k == 0 ? signal_path : idler_path;
        std::ifstream is(path);
        if (!is)
            throw FrameFileError(FrameFileError::Kind::io,
                                 "cannot open " + path.string());
        int line = 0;
        auto rows = detail::parse_csv_rows(is, path.string(), line);
        auto f = detail::frame_from_rows(rows, md,
                                         k == 0 ? Region::signal
                                                : Region::idler,
                                         path.string());
        (k == 0 ? fp.signal : fp.idler) = std::move(f);
    }
    if (fp.signal.width() != fp.idler.width()
        || fp.signal.height() != fp.idler.height())
        throw FrameFileError(FrameFileError::Kind::parse,
                             "signal and idler CSV shapes differ");
    return fp;
}

//! One file with the signal block, a blank line, then the idler block
inline FramePair
import_csv(std::filesystem::path const& path, CsvMetadata const& md)
{
    detail::require_metadata(md);
    std::ifstream is(path);
    if (!is)
        throw FrameFileError(FrameFileError::Kind::io,
                             "cannot open " + path.string());
    int line = 0;
    auto rs = detail::parse_csv_rows(is, path.string(), line);
    auto ri = detail::parse_csv_rows(is, path.string(), line);
    if (ri.empty())
        throw FrameFileError(FrameFileError::Kind::parse,
                             path.string()
                                 + ": expected two blocks separated by a "
                                   "blank line");
    FramePair fp{detail::frame_from_rows(rs, md, Region::signal, path.string()),
                 detail::frame_from_rows(ri, md, Region::idler, path.string())};
    if (fp.signal.width() != fp.idler.width()
        || fp.signal.height() != fp.idler.height())
        throw FrameFileError(FrameFileError::Kind::parse,
                             "signal and idler CSV blocks differ in shape");
    return fp;
}

inline void export_csv(DetectorFrame const& f, std::ostream& os)
{
    os.precision(17);
    for (int y = 0; y < f.height(); ++y)
    {
        for (int x = 0; x < f.width(); ++x)
        {
            if (x)
                os << ',';
            os << f(x, y);
        }
        os << '\n';
    }
}

inline void export_csv(DetectorFrame const& f, std::filesystem::path const& path)
{
    std::ofstream os(path);
    if (!os)
        throw FrameFileError(FrameFileError::Kind::io,
                             "cannot open " + path.string() + " for writing");
    export_csv(f, os);
}

}  // namespace twinbeam
