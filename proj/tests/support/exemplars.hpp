#pragma once

#include <utility>
#include <vector>

#include "maskmatch/prompts.hpp"

namespace maskmatch::testing {

// One raw example per task family, in family order.
inline std::vector<std::pair<TaskFamily, RawExample>> family_exemplars() {
    std::vector<std::pair<TaskFamily, RawExample>> out;
    RawExample topic;
    topic.x1 = "NASA plans to launch...";
    out.emplace_back(TaskFamily::kTopicOrSentiment, topic);

    RawExample entity;
    entity.x1 = "Currently Ritek is the largest producer of OLEDs in the world";
    entity.target = "Ritek";
    out.emplace_back(TaskFamily::kEntityTyping, entity);

    RawExample relation;
    relation.x1 = "He was an army of the Korean War";
    relation.head = "He";
    relation.head_type = "person";
    relation.tail = "army";
    relation.tail_type = "organization";
    out.emplace_back(TaskFamily::kRelationClassification, relation);

    RawExample nli;
    nli.x1 = "A man is playing a guitar on stage";
    nli.x2 = "A person is performing music";
    out.emplace_back(TaskFamily::kNliOrParaphrase, nli);

    RawExample wic;
    wic.x1 = "You must carry your camping gear";
    wic.x2 = "Sound carries well over water";
    wic.k1 = "carry";
    wic.k2 = "carries";
    out.emplace_back(TaskFamily::kWordInContext, wic);

    RawExample stance;
    stance.x1 =
        "We are so becoming a failing nation. Between the rights of illegals and uneducated and now obese are "
        "claiming rights.";
    stance.target = "illegal immigrant";
    out.emplace_back(TaskFamily::kStanceDetection, stance);
    return out;
}

}  // namespace maskmatch::testing
