// SPDX-License-Identifier: Apache-2.0
#include <gtest/gtest.h>

#include <filesystem>
#include <thread>
#include <unistd.h>

#include "caora/y1_telemetry.hpp"

using namespace caora;

namespace {

const ResourcePool kPool = ResourcePool::with_base(7.0);

std::string socket_path(const std::string& tag) {
  return (std::filesystem::temp_directory_path() / fmt::format("caora-{}-{}.sock", tag, ::getpid())).string();
}

Y1Report random_report(Rng& rng) {
  std::uniform_real_distribution<double> u(0.0, 10.0);
  std::uniform_int_distribution<int> i(0, 1000);
  Y1Report r;
  r.t = i(rng);
  r.d_ran = u(rng);
  r.d_ai = u(rng);
  r.active_users = i(rng);
  r.latency_proxy = u(rng) / 3.0;
  r.throughput_proxy = u(rng) * 1e-7;
  r.network_load = u(rng) * 1e5;
  return r;
}

// Reports for a random-action trace of `steps` environment steps, one per step.
std::vector<Y1Report> env_trace(int steps, std::uint64_t seed, std::vector<StepInfo>* infos = nullptr) {
  ResourceEnv env(ScenarioProfile::peak(50, seed), kPool, EnvConfig{});
  Rng rng(seed + 1);
  std::uniform_real_distribution<double> a(-7, 7);
  std::vector<Y1Report> out;
  std::optional<StepInfo> prev;
  while (int(out.size()) < steps) {
    if (env.done() || out.empty()) {
      env.reset();
      prev.reset();
    }
    out.push_back(build_report(prev ? &*prev : nullptr, env.current_sample(), kPool));
    prev = env.step({a(rng), a(rng)}).info;
    if (infos) infos->push_back(*prev);
  }
  return out;
}

}  // namespace

TEST(BuildReport, FullLoad) {
  const Y1Report r = build_report(nullptr, {0, 3, 4, 7}, kPool);
  EXPECT_EQ(r.network_load, 1.0);
  EXPECT_EQ(r.latency_proxy, 1.0);
  EXPECT_EQ(r.active_users, 7);
  EXPECT_EQ(r.schema_version, 1);
}

TEST(BuildReport, ZeroDemand) {
  const Y1Report r = build_report(nullptr, {0, 0, 0, 0}, kPool);
  EXPECT_EQ(r.network_load, 0.0);
  EXPECT_EQ(r.throughput_proxy, 0.0);
}

TEST(BuildReport, CarriesPreviousCompletionMassAndChecksTimesteps) {
  StepInfo prev;
  prev.t = 4;
  prev.c_ran = 3.0;
  prev.c_ai = 1.5;
  const Y1Report r = build_report(&prev, {5, 2, 2, 4}, kPool);
  EXPECT_EQ(r.throughput_proxy, 4.5);
  EXPECT_EQ(r.t, 5);
  EXPECT_THROW(build_report(&prev, {7, 2, 2, 4}, kPool), InvalidArgument);
  EXPECT_THROW(build_report(nullptr, {3, 2, 2, 4}, kPool), InvalidArgument);
}

TEST(BuildReport, HundredStepTraceReproducesEnvironmentRows) {
  std::vector<StepInfo> infos;
  const auto reports = env_trace(100, 3, &infos);
  ASSERT_EQ(reports.size(), infos.size());
  for (std::size_t i = 0; i < reports.size(); ++i) {
    EXPECT_EQ(reports[i].t, infos[i].t);
    EXPECT_EQ(reports[i].d_ran, infos[i].d_ran);
    EXPECT_EQ(reports[i].d_ai, infos[i].d_ai);
    EXPECT_EQ(reports[i].network_load, (infos[i].d_ran + infos[i].d_ai) / 7.0);
    if (i > 0) EXPECT_EQ(reports[i].throughput_proxy, infos[i - 1].c_ran + infos[i - 1].c_ai);
  }
}

TEST(BuildReport, PureFunctionOfInputs) {
  StepInfo prev;
  prev.t = 1;
  prev.c_ran = 2.25;
  const DemandSample s{2, 5, 3, 8};
  EXPECT_EQ(serialize_report(build_report(&prev, s, kPool)), serialize_report(build_report(&prev, s, kPool)));
}

TEST(Serialize, WireFieldsInOrder) {
  const Y1Report r = build_report(nullptr, {0, 3, 4, 7}, kPool);
  EXPECT_EQ(serialize_report(r),
            "{\"t\":0,\"d_ran\":3.0,\"d_ai\":4.0,\"active_users\":7,\"latency_proxy\":1.0,"
            "\"throughput_proxy\":0.0,\"network_load\":1.0,\"schema_version\":1}\n");
}

TEST(Serialize, RoundTripIsIdentityForRandomReports) {
  Rng rng(14);
  for (int i = 0; i < 5000; ++i) {
    const Y1Report r = random_report(rng);
    const std::string line = serialize_report(r);
    ASSERT_EQ(line.back(), '\n');
    ASSERT_EQ(parse_report(line), r);
    ASSERT_EQ(parse_report(std::string_view(line).substr(0, line.size() - 1)), r);
  }
}

TEST(Parse, TruncatedLineFailsWithOffset) {
  const std::string line = serialize_report(build_report(nullptr, {0, 3, 4, 7}, kPool));
  try {
    parse_report(std::string_view(line).substr(0, 30));
    FAIL() << "expected a parse error";
  } catch (const ParseError& e) {
    EXPECT_LE(e.offset(), 30u);
  }
}

TEST(Parse, RejectsNegativeLoad) {
  EXPECT_THROW(parse_report("{\"t\":0,\"d_ran\":3,\"d_ai\":4,\"active_users\":7,\"latency_proxy\":1,"
                            "\"throughput_proxy\":0,\"network_load\":-1,\"schema_version\":1}"),
               ParseError);
}

TEST(Parse, RejectsUnknownMissingMistypedFieldsAndOtherSchemas) {
  const std::string good = "{\"t\":0,\"d_ran\":3,\"d_ai\":4,\"active_users\":7,\"latency_proxy\":1,"
                           "\"throughput_proxy\":0,\"network_load\":1,\"schema_version\":1}";
  EXPECT_NO_THROW(parse_report(good));
  std::string extra = good;
  extra.insert(extra.size() - 1, ",\"jitter\":2");
  try {
    parse_report(extra);
    FAIL();
  } catch (const ParseError& e) {
    EXPECT_EQ(e.offset(), extra.find("\"jitter\""));
  }
  std::string missing = good;
  missing.replace(missing.find(",\"network_load\":1"), 17, "");
  EXPECT_THROW(parse_report(missing), ParseError);
  std::string typed = good;
  typed.replace(typed.find("\"t\":0"), 5, "\"t\":\"0\"");
  EXPECT_THROW(parse_report(typed), ParseError);
  std::string fractional = good;
  fractional.replace(fractional.find("\"active_users\":7"), 16, "\"active_users\":7.5");
  EXPECT_THROW(parse_report(fractional), ParseError);
  std::string schema = good;
  schema.replace(schema.find("\"schema_version\":1"), 18, "\"schema_version\":2");
  EXPECT_THROW(parse_report(schema), ParseError);
  EXPECT_THROW(parse_report("[1,2]"), ParseError);
  EXPECT_THROW(parse_report(""), ParseError);
}

TEST(Registration, LocalSocketNeedsEndpoint) {
  EXPECT_THROW((ConsumerRegistration{"x", Delivery::LocalSocket, std::nullopt}.validate()), InvalidArgument);
  EXPECT_THROW((ConsumerRegistration{"", Delivery::InProcess, std::nullopt}.validate()), InvalidArgument);
  EXPECT_NO_THROW((ConsumerRegistration{"x", Delivery::InProcess, std::nullopt}.validate()));
}

TEST(Publisher, InProcessDeliversThousandInOrder) {
  Y1Publisher pub;
  std::vector<int> got;
  pub.register_consumer({"c", Delivery::InProcess, std::nullopt}, [&](const Y1Report& r) { got.push_back(r.t); });
  for (int t = 0; t < 1000; ++t) {
    Y1Report r;
    r.t = t;
    const DeliveryAck ack = pub.publish(r, "c");
    EXPECT_EQ(ack.sequence, std::uint64_t(t + 1));
  }
  ASSERT_EQ(got.size(), 1000u);
  for (int t = 0; t < 1000; ++t) EXPECT_EQ(got[t], t);
}

TEST(Publisher, UnknownConsumerIsTyped) {
  Y1Publisher pub;
  EXPECT_THROW(pub.publish(Y1Report{}, "nobody"), UnknownConsumerError);
  pub.register_consumer({"c", Delivery::InProcess, std::nullopt}, [](const Y1Report&) {});
  EXPECT_THROW(pub.register_consumer({"c", Delivery::InProcess, std::nullopt}, [](const Y1Report&) {}),
               InvalidArgument);
  pub.unregister_consumer("c");
  EXPECT_FALSE(pub.is_registered("c"));
  EXPECT_THROW(pub.publish(Y1Report{}, "c"), UnknownConsumerError);
}

TEST(Publisher, PerConsumerFifoUnderRandomBursts) {
  Rng rng(33);
  std::uniform_int_distribution<int> burst(1, 20), who(0, 2);
  Y1Publisher pub;
  std::array<std::vector<int>, 3> got;
  for (int c = 0; c < 3; ++c)
    pub.register_consumer({fmt::format("c{}", c), Delivery::InProcess, std::nullopt},
                          [&got, c](const Y1Report& r) { got[c].push_back(r.t); });
  std::array<int, 3> next{};
  for (int round = 0; round < 500; ++round) {
    const int c = who(rng);
    for (int k = burst(rng); k > 0; --k) {
      Y1Report r;
      r.t = next[c]++;
      pub.publish(r, fmt::format("c{}", c));
    }
  }
  for (int c = 0; c < 3; ++c) {
    ASSERT_EQ(int(got[c].size()), next[c]);
    for (int i = 0; i < next[c]; ++i) ASSERT_EQ(got[c][i], i);
  }
}

TEST(Publisher, SocketFailureKeepsUndeliveredReport) {
  const std::string path = socket_path("broken");
  Y1Publisher pub;
  {
    Y1SocketListener listener(path);
    pub.register_consumer({"s", Delivery::LocalSocket, path});
    listener.accept();
  }  // listener closes its end
  Y1Report r;
  r.t = 42;
  bool thrown = false;
  for (int i = 0; i < 100 && !thrown; ++i) {
    try {
      pub.publish(r, "s");
    } catch (const TransportError& e) {
      thrown = true;
      EXPECT_EQ(e.undelivered().t, 42);
    }
  }
  EXPECT_TRUE(thrown);
}

TEST(Publisher, ConnectToMissingSocketFails) {
  Y1Publisher pub;
  EXPECT_THROW(pub.register_consumer({"s", Delivery::LocalSocket, socket_path("absent")}), Error);
}

TEST(Transport, SocketAndInProcessSequencesAreIdentical) {
  const auto trace = env_trace(10000, 8);
  const std::string path = socket_path("equiv");
  Y1SocketListener listener(path);
  Y1Publisher pub;
  std::vector<Y1Report> in_process, over_socket;
  pub.register_consumer({"mem", Delivery::InProcess, std::nullopt},
                        [&](const Y1Report& r) { in_process.push_back(r); });
  pub.register_consumer({"sock", Delivery::LocalSocket, path});
  std::thread reader([&] { listener.serve([&](const Y1Report& r) { over_socket.push_back(r); }); });
  for (const auto& r : trace) {
    pub.publish(r, "mem");
    const DeliveryAck ack = pub.publish(r, "sock");
    EXPECT_EQ(ack.bytes, serialize_report(r).size());
  }
  pub.close("sock");
  reader.join();
  EXPECT_EQ(in_process, trace);
  EXPECT_EQ(over_socket, in_process);
}
