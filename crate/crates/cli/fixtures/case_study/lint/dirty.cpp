// Hazard lights on pedestrian detection from camera or LIDAR.

#include <iostream>
#include <string>
#include <thread>

#include <mqtt/client.h>

#include <capnproto/caller.h>
#include <capnproto/types/vehicle/hazard.h>

static const std::string BROKER_ADDRESS = "tcp://localhost:1883";
static const std::string CLIENT_ID = "hazard_logic";

void call_runner()
{
    // Vehicle.Body.Lights.Hazard
    // also drives Vehicle.Body.Lights.HazardWarning.IsOn
    auto set_hazard = create_caller<types::vehicle::Hazard>();
    types::vehicle::Hazard hazard_value{};
    uint64_t result_id = 0;
    int ret = 0;

    mqtt::client client(BROKER_ADDRESS, CLIENT_ID);
    mqtt::connect_options options;
    options.set_clean_session(true);
    client.connect(options);
    client.subscribe("camera-front-detect", 1);
    client.subscribe("camera-back-detect", 1);
    client.subscribe("lidar-detect", 1);
    client.subscribe("radar-detect", 1);

    while (true) {
        auto msg = client.consume_message();
        if (!msg) {
            continue;
        }
        std::cout << "Received " << msg->get_topic() << ": " << msg->to_string() << std::endl;
        bool pedestrian = msg->to_string() == "1";
        if (pedestrian) {
            hazard_value.set_hazard(true);
            ret = set_hazard.call(hazard_value, &result_id);
            std::cout << "Hazard lights activated, ret=" << ret << std::endl;
        }
    }
}

int main()
{
    std::thread runner(call_runner);
    runner.join();
    return 0;
}
