// Reference program structure for generated decision logic: MQTT reception,
// a decision step and VSS actuator calls through generated callers.

#include <chrono>
#include <cstdint>
#include <iostream>
#include <string>
#include <thread>

#include <mqtt/client.h>

#include <capnproto/caller.h>
#include <capnproto/types/vehicle/acceleration.h>

static const std::string BROKER_ADDRESS = "tcp://localhost:1883";
static const std::string CLIENT_ID = "decision-logic";

void call_runner()
{
    auto set_acceleration = create_caller<types::vehicle::Acceleration>();
    types::vehicle::Acceleration acceleration_value{};
    uint64_t result_id = 0;
    int ret = 0;

    mqtt::client client(BROKER_ADDRESS, CLIENT_ID);
    mqtt::connect_options options;
    options.set_clean_session(true);
    client.connect(options);
    client.subscribe(TOPIC_NAME, 1);

    while (true) {
        auto msg = client.consume_message();
        if (!msg) {
            continue;
        }
        std::cout << "Received " << msg->get_topic() << ": " << msg->to_string() << std::endl;
        if (msg->to_string() == "1") {
            acceleration_value.set_longitudinal(
                acceleration_value.longitudinal() + 0.2
            );
            ret = set_acceleration.call(acceleration_value, &result_id);
            std::cout << "Acceleration request sent, ret=" << ret << std::endl;
        }
    }
}

int main()
{
    std::thread runner(call_runner);
    runner.join();
    return 0;
}
