#include <cstdio>
#include <filesystem>
#include <fstream>
#include <random>

#include "doctest.h"
#include "finnet/checkpoint.hpp"
#include "finnet/network.hpp"

using namespace finnet;
namespace fs = std::filesystem;

namespace {

struct TempDir {
    fs::path path;
    TempDir() {
        path = fs::temp_directory_path() / ("finnet-test-" + std::to_string(std::random_device{}()));
        fs::create_directories(path);
    }
    ~TempDir() { fs::remove_all(path); }
    std::string file(const std::string& name) const { return (path / name).string(); }
};

std::string read_bytes(const std::string& path) {
    std::ifstream is(path, std::ios::binary);
    REQUIRE(is.good());
    return {std::istreambuf_iterator<char>(is), std::istreambuf_iterator<char>()};
}

void write_bytes(const std::string& path, const std::string& bytes) {
    std::ofstream os(path, std::ios::binary);
    os.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
}

}  // namespace

TEST_CASE("save -> load -> save is byte identical") {
    TempDir tmp;
    Network net(build_cnn_senet(4), 11);
    Checkpoint c = checkpoint_from(net, {{"class_names", "a,b,c,d"}, {"stage", "pretrain"}});
    save_checkpoint(c, tmp.file("a.fnck"));
    Checkpoint loaded = load_checkpoint(tmp.file("a.fnck"));
    save_checkpoint(loaded, tmp.file("b.fnck"));
    CHECK(read_bytes(tmp.file("a.fnck")) == read_bytes(tmp.file("b.fnck")));
    CHECK(loaded.metadata.at("class_names") == "a,b,c,d");
    CHECK(loaded.spec_text == net.spec().serialize());
}

TEST_CASE("round trip restores every parameter bitwise") {
    TempDir tmp;
    Network net(build_cnn_senet(5), 3);
    Checkpoint c = checkpoint_from(net);
    save_checkpoint(c, tmp.file("n.fnck"));
    auto restored = network_from_checkpoint(load_checkpoint(tmp.file("n.fnck")));
    auto a = net.buffers(), b = restored->buffers();
    REQUIRE(a.size() == b.size());
    for (size_t i = 0; i < a.size(); ++i) {
        CHECK(a[i].name == b[i].name);
        CHECK(*a[i].data == *b[i].data);
    }
}

TEST_CASE("manifest carries the resized dense entry for C=23") {
    Network net(build_cnn_senet(23), 0);
    Checkpoint c = checkpoint_from(net);
    const Checkpoint::Entry* head = nullptr;
    for (const auto& e : c.entries)
        if (e.name.find("dense.weight") != std::string::npos) head = &e;
    REQUIRE(head != nullptr);
    CHECK(head->shape == Shape{256, 23});
    // offsets tile the payload without gaps
    std::uint64_t off = 0;
    for (const auto& e : c.entries) {
        CHECK(e.offset == off);
        off += e.data.size();
    }
}

TEST_CASE("batchnorm running statistics survive the checkpoint") {
    TempDir tmp;
    NetworkSpec spec = build_cnn_senet(4);
    Network net(spec, 1);
    // one train-mode forward initializes the running stats
    Tensor x = Tensor::filled({2, 3, 200, 200}, 0.5f);
    std::mt19937_64 rng(0);
    net.forward(x, true, &rng);
    Checkpoint c = checkpoint_from(net);
    save_checkpoint(c, tmp.file("bn.fnck"));
    auto restored = network_from_checkpoint(load_checkpoint(tmp.file("bn.fnck")));
    // inference works immediately: stats (and the init flags) were persisted
    Tensor y = restored->forward(x, false);
    Tensor y0 = net.forward(x, false);
    CHECK(y.values() == y0.values());
}

TEST_CASE("truncated file is rejected") {
    TempDir tmp;
    Network net(build_cnn_senet(4), 2);
    save_checkpoint(checkpoint_from(net), tmp.file("t.fnck"));
    std::string bytes = read_bytes(tmp.file("t.fnck"));
    write_bytes(tmp.file("cut.fnck"), bytes.substr(0, bytes.size() / 2));
    CHECK_THROWS_AS(load_checkpoint(tmp.file("cut.fnck")), Error);
}

TEST_CASE("payload corruption fails the checksum") {
    TempDir tmp;
    Network net(build_cnn_senet(4), 2);
    save_checkpoint(checkpoint_from(net), tmp.file("c.fnck"));
    std::string bytes = read_bytes(tmp.file("c.fnck"));
    bytes[bytes.size() - 64] ^= 0x01;  // flip one payload bit
    write_bytes(tmp.file("bad.fnck"), bytes);
    CHECK_THROWS_WITH_AS(load_checkpoint(tmp.file("bad.fnck")), doctest::Contains("corrupt"), Error);
}

TEST_CASE("bad magic and unsupported version are rejected") {
    TempDir tmp;
    Network net(build_cnn_senet(4), 2);
    save_checkpoint(checkpoint_from(net), tmp.file("v.fnck"));
    std::string bytes = read_bytes(tmp.file("v.fnck"));

    std::string wrong_magic = bytes;
    wrong_magic[0] = 'X';
    write_bytes(tmp.file("magic.fnck"), wrong_magic);
    CHECK_THROWS_WITH_AS(load_checkpoint(tmp.file("magic.fnck")), doctest::Contains("magic"), Error);

    std::string wrong_version = bytes;
    wrong_version[4] = 9;
    write_bytes(tmp.file("ver.fnck"), wrong_version);
    CHECK_THROWS_WITH_AS(load_checkpoint(tmp.file("ver.fnck")),
                         doctest::Contains("version 9"), Error);

    CHECK_THROWS_AS(load_checkpoint(tmp.file("missing.fnck")), Error);
}

TEST_CASE("loading into a mismatched spec names the offending parameter") {
    TempDir tmp;
    Network net(build_cnn_senet(4), 2);
    Checkpoint c = checkpoint_from(net);
    c.entries.front().name = "L0.conv.weight_v2";  // orphan the first parameter
    save_checkpoint(c, tmp.file("m.fnck"));
    CHECK_THROWS_WITH_AS(network_from_checkpoint(load_checkpoint(tmp.file("m.fnck"))),
                         doctest::Contains("L0.conv.weight"), Error);
}
