#pragma once

// Multi-key-to-door gridworld.
//
// An episode is a fixed sequence of rooms: for every key room a timed key
// stage followed by a timed wait stage, then a final room with the rewarded
// exit door. Each key room has its own door on the room boundary. A door
// opens as soon as its condition holds and the agent steps out through it
// automatically; it then stays out until the stage timer runs down.
//
//   sequential  : room k holds key k; door k needs keys 1..k. The final door
//                 needs every intermediate door to have been passed.
//   conjunctive : keys are spread over rooms (`key_rooms`), picked up in any
//                 order; door k needs the keys of room k. The final door needs
//                 all K keys.
//
// The observation is a top-down view of the current room, channel-major:
// [agent | keys | doors] x rows x cols, values in {0, 1}.

#include <algorithm>
#include <cstdlib>
#include <cstdint>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

#include "conspec/rng.hpp"

namespace conspec::env {

enum class Action : int { up = 0, down = 1, left = 2, right = 3, stay = 4 };
inline constexpr int kNumActions = 5;
inline constexpr int kChannels = 3;

struct Cell {
    int row = 0;
    int col = 0;
    friend bool operator==(const Cell&, const Cell&) = default;
};

struct GridTask {
    int rows = 5;
    int cols = 5;
    int keys = 1;
    int key_steps = 10;
    int wait_steps = 20;
    int final_steps = 10;
    bool conjunctive = false;
    double terminal_reward = 10.0;
    std::uint64_t layout_seed = 0;
    // Key-room start cells are at least this Manhattan distance from the
    // room's keys (capped at the largest distance the room offers).
    int key_start_distance = 2;
    // Conjunctive only: room index of every key. Empty means key k in room k.
    std::vector<int> key_rooms;

    int key_room_count() const {
        if (!conjunctive || key_rooms.empty()) return keys;
        return *std::max_element(key_rooms.begin(), key_rooms.end()) + 1;
    }
    int room_of_key(int k) const {
        return (conjunctive && !key_rooms.empty()) ? key_rooms[static_cast<std::size_t>(k)] : k;
    }
    int episode_length() const { return key_room_count() * (key_steps + wait_steps) + final_steps; }
    int obs_dim() const { return kChannels * rows * cols; }

    void validate() const {
        auto fail = [](const std::string& what) { throw std::invalid_argument("task." + what); };
        if (rows < 3 || rows > 9) fail("rows: must be in [3, 9]");
        if (cols < 3 || cols > 9) fail("cols: must be in [3, 9]");
        if (keys < 1 || keys > 8) fail("keys: must be in [1, 8]");
        if (key_steps < 1) fail("key_steps: must be >= 1");
        if (wait_steps < 0) fail("wait_steps: must be >= 0");
        if (final_steps < 1) fail("final_steps: must be >= 1");
        if (key_start_distance < 0) fail("key_start_distance: must be >= 0");
        if (!(terminal_reward > 0.0)) fail("terminal_reward: must be > 0");
        if (!key_rooms.empty()) {
            if (!conjunctive) fail("key_rooms: only valid for conjunctive tasks");
            if (static_cast<int>(key_rooms.size()) != keys) fail("key_rooms: need one entry per key");
            std::vector<int> per_room(static_cast<std::size_t>(keys), 0);
            for (int r : key_rooms) {
                if (r < 0 || r >= keys) fail("key_rooms: room index out of range");
                ++per_room[static_cast<std::size_t>(r)];
            }
            const int rooms = key_room_count();
            for (int r = 0; r < rooms; ++r)
                if (per_room[static_cast<std::size_t>(r)] == 0) fail("key_rooms: empty key room");
        }
        const int interior = (rows - 2) * (cols - 2);
        for (int r = 0; r < key_room_count(); ++r) {
            int n = 0;
            for (int k = 0; k < keys; ++k) n += room_of_key(k) == r;
            if (n > interior) fail("keys: too many keys for the room interior");
        }
    }
};

enum class StageKind { key_room, wait_room, final_room };

struct Stage {
    StageKind kind;
    int room;   // key-room index for key/wait stages, -1 for the final room
    int begin;  // first step index
    int length;
};

inline std::vector<Stage> stages_of(const GridTask& task) {
    std::vector<Stage> out;
    int t = 0;
    for (int r = 0; r < task.key_room_count(); ++r) {
        out.push_back({StageKind::key_room, r, t, task.key_steps});
        t += task.key_steps;
        if (task.wait_steps > 0) {
            out.push_back({StageKind::wait_room, r, t, task.wait_steps});
            t += task.wait_steps;
        }
    }
    out.push_back({StageKind::final_room, -1, t, task.final_steps});
    return out;
}

// Fixed geometry derived from the task's layout seed.
struct Layout {
    std::vector<Cell> key_cells;   // per key
    std::vector<Cell> room_doors;  // per key room
    Cell final_door;
};

inline Layout make_layout(const GridTask& task) {
    Rng rng(task.layout_seed * 0x2545F4914F6CDD1DULL + 17);
    std::vector<Cell> boundary, interior;
    for (int r = 0; r < task.rows; ++r)
        for (int c = 0; c < task.cols; ++c) {
            const bool edge = r == 0 || c == 0 || r == task.rows - 1 || c == task.cols - 1;
            const bool corner = (r == 0 || r == task.rows - 1) && (c == 0 || c == task.cols - 1);
            if (edge && !corner) boundary.push_back({r, c});
            if (!edge) interior.push_back({r, c});
        }
    auto take = [&rng](std::vector<Cell>& pool) {
        const auto i = static_cast<std::size_t>(rng.below(pool.size()));
        const Cell c = pool[i];
        pool.erase(pool.begin() + static_cast<std::ptrdiff_t>(i));
        return c;
    };

    Layout layout;
    // Doors are distinct across rooms while boundary cells last, so rooms stay
    // distinguishable once their keys are gone.
    std::vector<Cell> door_pool = boundary;
    for (int r = 0; r < task.key_room_count(); ++r) {
        if (door_pool.empty()) door_pool = boundary;
        layout.room_doors.push_back(take(door_pool));
    }
    if (door_pool.empty()) door_pool = boundary;
    layout.final_door = take(door_pool);

    layout.key_cells.resize(static_cast<std::size_t>(task.keys));
    for (int r = 0; r < task.key_room_count(); ++r) {
        std::vector<Cell> pool = interior;
        for (int k = 0; k < task.keys; ++k)
            if (task.room_of_key(k) == r) layout.key_cells[static_cast<std::size_t>(k)] = take(pool);
    }
    return layout;
}

struct Event {
    enum class Kind { none, key_pickup, door_exit, final_exit };
    Kind kind = Kind::none;
    int index = -1;

    std::string label() const {
        switch (kind) {
            case Kind::key_pickup: return "key_" + std::to_string(index + 1);
            case Kind::door_exit: return "door_" + std::to_string(index + 1);
            case Kind::final_exit: return "final_door";
            default: return "";
        }
    }
    friend bool operator==(const Event&, const Event&) = default;
};

using Observation = std::vector<double>;

struct StepResult {
    Observation observation;
    double reward = 0.0;
    bool done = false;
    Event event;  // what happened during this transition
};

class KeyDoorEnv {
public:
    explicit KeyDoorEnv(GridTask task)
        : task_(validated(std::move(task))), stages_(stages_of(task_)), layout_(make_layout(task_)) {
        length_ = task_.episode_length();
        reset(0);
    }

    const GridTask& task() const { return task_; }
    const Layout& layout() const { return layout_; }
    const std::vector<Stage>& stages() const { return stages_; }
    int episode_length() const { return length_; }
    int obs_dim() const { return task_.obs_dim(); }

    int time() const { return t_; }
    bool done() const { return done_; }
    bool succeeded() const { return success_; }
    bool out_of_room() const { return out_; }
    Cell agent() const { return agent_; }
    const Stage& stage() const { return stages_[stage_index_]; }
    bool holds_key(int k) const { return held_[static_cast<std::size_t>(k)]; }
    bool passed_door(int r) const { return door_passed_[static_cast<std::size_t>(r)]; }

    Observation reset(std::uint64_t seed) {
        Rng rng(seed);
        starts_.clear();
        for (const auto& st : stages_) {
            const auto free = start_cells(st);
            starts_.push_back(free[static_cast<std::size_t>(rng.below(free.size()))]);
        }
        held_.assign(static_cast<std::size_t>(task_.keys), false);
        door_passed_.assign(static_cast<std::size_t>(task_.key_room_count()), false);
        t_ = 0;
        stage_index_ = 0;
        done_ = false;
        success_ = false;
        enter_stage(0);
        return observe();
    }

    StepResult step(Action action) {
        if (done_) throw std::logic_error("KeyDoorEnv::step called after the episode ended");
        StepResult res;
        const Stage& st = stages_[stage_index_];
        if (!out_) {
            const Cell target = moved(agent_, action);
            switch (st.kind) {
                case StageKind::key_room: res.event = step_key_room(st.room, target); break;
                case StageKind::wait_room: agent_ = target; break;
                case StageKind::final_room:
                    if (target == layout_.final_door) {
                        if (final_door_open()) {
                            agent_ = target;
                            out_ = true;
                            success_ = true;
                            res.reward = task_.terminal_reward;
                            res.event = {Event::Kind::final_exit, -1};
                        }
                    } else {
                        agent_ = target;
                    }
                    break;
            }
        }
        ++t_;
        if (t_ >= length_) {
            done_ = true;
        } else if (stage_index_ + 1 < stages_.size() && t_ >= stages_[stage_index_ + 1].begin) {
            enter_stage(stage_index_ + 1);
        }
        res.done = done_;
        res.observation = observe();
        return res;
    }

    Observation observe() const {
        const int R = task_.rows, C = task_.cols;
        Observation obs(static_cast<std::size_t>(kChannels * R * C), 0.0);
        auto at = [&](int ch, Cell c) -> double& {
            return obs[static_cast<std::size_t>((ch * R + c.row) * C + c.col)];
        };
        const Stage& st = stages_[stage_index_];
        at(0, agent_) = 1.0;
        if (st.kind == StageKind::key_room) {
            for (int k = 0; k < task_.keys; ++k)
                if (task_.room_of_key(k) == st.room && !held_[static_cast<std::size_t>(k)])
                    at(1, layout_.key_cells[static_cast<std::size_t>(k)]) = 1.0;
            at(2, layout_.room_doors[static_cast<std::size_t>(st.room)]) = 1.0;
        } else if (st.kind == StageKind::final_room) {
            at(2, layout_.final_door) = 1.0;
        }
        return obs;
    }

    bool door_open(int room) const {
        if (task_.conjunctive) {
            for (int k = 0; k < task_.keys; ++k)
                if (task_.room_of_key(k) == room && !held_[static_cast<std::size_t>(k)]) return false;
            return true;
        }
        for (int k = 0; k <= room; ++k)
            if (!held_[static_cast<std::size_t>(k)]) return false;
        return true;
    }

    bool final_door_open() const {
        if (task_.conjunctive)
            return std::all_of(held_.begin(), held_.end(), [](bool b) { return b; });
        return std::all_of(door_passed_.begin(), door_passed_.end(), [](bool b) { return b; });
    }

private:
    static GridTask validated(GridTask task) {
        task.validate();
        return task;
    }

    Cell moved(Cell c, Action a) const {
        switch (a) {
            case Action::up: c.row -= 1; break;
            case Action::down: c.row += 1; break;
            case Action::left: c.col -= 1; break;
            case Action::right: c.col += 1; break;
            case Action::stay: break;
        }
        c.row = std::clamp(c.row, 0, task_.rows - 1);
        c.col = std::clamp(c.col, 0, task_.cols - 1);
        return c;
    }

    bool blocked_for_start(const Stage& st, Cell c) const {
        if (st.kind == StageKind::key_room) {
            if (c == layout_.room_doors[static_cast<std::size_t>(st.room)]) return true;
            for (int k = 0; k < task_.keys; ++k)
                if (task_.room_of_key(k) == st.room && c == layout_.key_cells[static_cast<std::size_t>(k)])
                    return true;
        }
        if (st.kind == StageKind::final_room && c == layout_.final_door) return true;
        return false;
    }

    // Candidate start cells of a stage, in row-major order.
    std::vector<Cell> start_cells(const Stage& st) const {
        std::vector<Cell> free;
        std::vector<int> dist;
        for (int r = 0; r < task_.rows; ++r)
            for (int c = 0; c < task_.cols; ++c) {
                if (blocked_for_start(st, {r, c})) continue;
                int d = 1 << 20;
                if (st.kind == StageKind::key_room)
                    for (int k = 0; k < task_.keys; ++k)
                        if (task_.room_of_key(k) == st.room) {
                            const Cell kc = layout_.key_cells[static_cast<std::size_t>(k)];
                            d = std::min(d, std::abs(kc.row - r) + std::abs(kc.col - c));
                        }
                free.push_back({r, c});
                dist.push_back(d);
            }
        const int need = std::min(task_.key_start_distance, *std::max_element(dist.begin(), dist.end()));
        std::vector<Cell> out;
        for (std::size_t i = 0; i < free.size(); ++i)
            if (dist[i] >= need) out.push_back(free[i]);
        return out;
    }

    Event step_key_room(int room, Cell target) {
        Event ev;
        if (target == layout_.room_doors[static_cast<std::size_t>(room)]) return ev;  // closed
        agent_ = target;
        for (int k = 0; k < task_.keys; ++k) {
            const auto ku = static_cast<std::size_t>(k);
            if (task_.room_of_key(k) == room && !held_[ku] && layout_.key_cells[ku] == agent_) {
                held_[ku] = true;
                ev = {Event::Kind::key_pickup, k};
            }
        }
        const auto ru = static_cast<std::size_t>(room);
        if (!door_passed_[ru] && door_open(room)) {
            door_passed_[ru] = true;
            agent_ = layout_.room_doors[ru];
            out_ = true;
            if (ev.kind == Event::Kind::none) ev = {Event::Kind::door_exit, room};
        }
        return ev;
    }

    void enter_stage(std::size_t i) {
        stage_index_ = i;
        agent_ = starts_[i];
        out_ = false;
    }

    GridTask task_;
    std::vector<Stage> stages_;
    Layout layout_;
    int length_ = 0;

    std::vector<Cell> starts_;
    std::vector<bool> held_;
    std::vector<bool> door_passed_;
    Cell agent_;
    std::size_t stage_index_ = 0;
    int t_ = 0;
    bool done_ = false;
    bool success_ = false;
    bool out_ = false;
};

}  // namespace conspec::env
