#include <stdio.h>
#include "moodtune.h"

int main(int argc, char **argv) {
    if (argc != 3) {
        fprintf(stderr, "usage: smoke <catalog.jsonl> <chain.jsonl>\n");
        return 2;
    }
    MtRecommender *rec = NULL;
    if (mt_recommender_open(argv[1], 0.5, &rec) != MT_STATUS_OK) {
        fprintf(stderr, "open: %s\n", mt_last_error());
        return 1;
    }
    double mood[MT_NUM_EMOTIONS] = {1, 0, 0, 0, 0};
    char *json = NULL;
    if (mt_recommender_recommend(rec, "alice", mood, 3, 1.0, 0.0, 0.0, &json) != MT_STATUS_OK) {
        fprintf(stderr, "recommend: %s\n", mt_last_error());
        return 1;
    }
    printf("%s\n", json);
    mt_string_free(json);
    mt_recommender_free(rec);

    MtLedger *ledger = NULL;
    if (mt_ledger_open(argv[2], &ledger) != MT_STATUS_OK) {
        fprintf(stderr, "ledger: %s\n", mt_last_error());
        return 1;
    }
    int64_t balance = 0;
    mt_ledger_award_tokens(ledger, "alice", 3, "feedback");
    mt_ledger_balance(ledger, "alice", &balance);
    printf("balance %lld\n", (long long)balance);
    mt_ledger_free(ledger);
    return 0;
}
