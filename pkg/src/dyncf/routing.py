"""Split a chunk of events into the four update groups.

Groups, applied in this order by the dynamic models:

1. ``new_entity``: new users whose chunk items are all new. Their items are
   the block items.
2. ``new_user``: events of the remaining new users on items that are known
   at the start of the chunk or introduced by group 1.
3. ``new_item``: events on items that are still unknown, by anybody outside
   group 1 (this includes the deferred new-item events of group-2 users).
4. ``known``: events of previously known users on items known after group 1.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .seq_tensor import EventLog


@dataclass
class ChunkGroups:
    new_entity: EventLog
    new_user: EventLog
    new_item: EventLog
    known: EventLog
    block_users: list
    block_items: list
    new_users: list
    new_items: list

    def counts(self) -> dict:
        return {
            "new_entity": len(self.new_entity),
            "new_user": len(self.new_user),
            "new_item": len(self.new_item),
            "known": len(self.known),
        }


def classify_chunk(chunk: EventLog, known_users, known_items) -> ChunkGroups:
    """Deterministic partition of ``chunk``; entity lists keep first-appearance order."""
    users = chunk.users.tolist()
    items = chunk.items.tolist()
    chunk_items_of: dict = {}
    for u, i in zip(users, items):
        chunk_items_of.setdefault(u, []).append(i)
    block_users = [
        u for u, its in chunk_items_of.items()
        if u not in known_users and all(i not in known_items for i in its)
    ]
    block_user_set = set(block_users)
    block_items = list(dict.fromkeys(
        i for u, i in zip(users, items) if u in block_user_set
    ))
    block_item_set = set(block_items)
    new_users = [u for u in chunk_items_of if u not in known_users and u not in block_user_set]
    new_user_set = set(new_users)

    labels = np.empty(len(users), dtype=np.int8)
    for n, (u, i) in enumerate(zip(users, items)):
        item_known = i in known_items or i in block_item_set
        if u in block_user_set:
            labels[n] = 1
        elif not item_known:
            labels[n] = 3
        elif u in new_user_set:
            labels[n] = 2
        else:
            labels[n] = 4
    new_items = list(dict.fromkeys(i for i, lab in zip(items, labels) if lab == 3))
    return ChunkGroups(
        chunk[labels == 1], chunk[labels == 2], chunk[labels == 3], chunk[labels == 4],
        block_users, block_items, new_users, new_items,
    )
