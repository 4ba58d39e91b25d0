import { describe, expect, it } from "vitest";

import { ApiClient, ApiError } from "../src/api.js";
import type { Candidate } from "../src/api.js";
import { MemoryReviewerStore, ReviewController, validateDecision } from "../src/controller.js";
import { QueueState } from "../src/state.js";

function candidate(id: string, status: Candidate["status"] = "pending"): Candidate {
  return {
    id,
    db_id: "airline_mini",
    base: {
      interaction_id: "i00000_airline_mini",
      turn_index: 1,
      utterances: ["List all the airlines."],
      prev_sql: "SELECT * FROM AIRLINES",
    },
    new_sql: "SELECT * FROM AIRLINES LIMIT 3",
    base_template_hash: "b".repeat(16),
    modification_template_hash: "m".repeat(16),
    draft_utterance: "Just show the top 3.",
    status,
    final_utterance: null,
    reviews: [],
    highlight: [
      { text: "SELECT * FROM AIRLINES", changed: false },
      { text: "LIMIT 3", changed: true },
    ],
  };
}

function jsonResponse(body: unknown, status = 200): Response {
  return new Response(JSON.stringify(body), {
    status,
    headers: { "content-type": "application/json" },
  });
}

function controllerWith(fetchFn: (input: string, init?: RequestInit) => Promise<Response>) {
  const api = new ApiClient("http://svc", fetchFn);
  const state = new QueueState(2);
  const store = new MemoryReviewerStore();
  store.set("tester");
  return { controller: new ReviewController(api, state, store), state };
}

describe("ApiClient", () => {
  it("builds filter query strings", async () => {
    const urls: string[] = [];
    const api = new ApiClient("http://svc", async (input) => {
      urls.push(input);
      return jsonResponse([]);
    });
    await api.listCandidates({ status: "pending", reviewer: "alice" });
    await api.listCandidates({ status: "all" });
    expect(urls[0]).toBe("http://svc/api/candidates?status=pending&reviewer=alice");
    expect(urls[1]).toBe("http://svc/api/candidates");
  });

  it("surfaces the service error envelope", async () => {
    const api = new ApiClient("http://svc", async () =>
      jsonResponse({ error: { code: "unknown_candidate", message: "no such id" } }, 404),
    );
    const err = await api.getCandidate("missing").catch((e) => e);
    expect(err).toBeInstanceOf(ApiError);
    expect(err.status).toBe(404);
    expect(err.code).toBe("unknown_candidate");
  });

  it("posts decisions as JSON", async () => {
    let captured: RequestInit | undefined;
    const api = new ApiClient("http://svc", async (_input, init) => {
      captured = init;
      return jsonResponse(candidate("c1", "accepted"));
    });
    await api.postDecision("c1", { reviewer: "r", action: "accept" });
    expect(captured?.method).toBe("POST");
    expect(JSON.parse(String(captured?.body))).toEqual({ reviewer: "r", action: "accept" });
  });
});

describe("QueueState", () => {
  it("pages client-side", () => {
    const state = new QueueState(2);
    state.replaceAll([candidate("a"), candidate("b"), candidate("c")]);
    expect(state.pageCount()).toBe(2);
    expect(state.currentPage().map((c) => c.id)).toEqual(["a", "b"]);
    state.nextPage();
    expect(state.currentPage().map((c) => c.id)).toEqual(["c"]);
    state.nextPage();
    expect(state.page).toBe(1); // clamped
  });

  it("clamps the page when the list shrinks", () => {
    const state = new QueueState(1);
    state.replaceAll([candidate("a"), candidate("b")]);
    state.nextPage();
    state.replaceAll([candidate("a")]);
    expect(state.page).toBe(0);
  });

  it("keeps dirty text per candidate", () => {
    const state = new QueueState();
    state.markDirty("c1", "edited wording");
    expect(state.dirtyText("c1")).toBe("edited wording");
    state.clearDirty("c1");
    expect(state.hasDirty("c1")).toBe(false);
  });
});

describe("validateDecision", () => {
  it("blocks empty revisions client-side", () => {
    expect(validateDecision("revise", "   ")).toMatch(/non-empty/);
    expect(validateDecision("revise", "better")).toBeNull();
    expect(validateDecision("accept")).toBeNull();
  });
});

describe("ReviewController", () => {
  it("keeps the cached list and raises a banner when the service is down", async () => {
    let up = true;
    const { controller, state } = controllerWith(async () => {
      if (!up) throw new Error("connection refused");
      return jsonResponse([candidate("c1")]);
    });
    expect(await controller.refresh()).toBe(true);
    expect(state.cards).toHaveLength(1);
    up = false;
    expect(await controller.refresh()).toBe(false);
    expect(state.cards).toHaveLength(1); // retained
    expect(state.banner).toMatch(/retry/i);
  });

  it("never drops typed revisions on network failure", async () => {
    const { controller, state } = controllerWith(async (input) => {
      if (input.endsWith("/decisions")) throw new Error("boom");
      return jsonResponse([candidate("c1")]);
    });
    await controller.refresh();
    await expect(controller.submit("c1", "revise", "my rewording")).rejects.toThrow();
    expect(state.dirtyText("c1")).toBe("my rewording");
    expect(state.banner).toMatch(/kept for resubmit/);
  });

  it("clears dirty text and updates the card on success", async () => {
    const { controller, state } = controllerWith(async (input) => {
      if (input.endsWith("/decisions")) {
        const updated = candidate("c1", "revised");
        updated.final_utterance = "my rewording";
        return jsonResponse(updated);
      }
      return jsonResponse([candidate("c1")]);
    });
    await controller.refresh();
    const updated = await controller.submit("c1", "revise", "my rewording");
    expect(updated.status).toBe("revised");
    expect(state.hasDirty("c1")).toBe(false);
    expect(state.cards[0].status).toBe("revised");
  });

  it("rejects empty revisions before any request is made", async () => {
    let posts = 0;
    const { controller } = controllerWith(async (input) => {
      if (input.endsWith("/decisions")) posts += 1;
      return jsonResponse([]);
    });
    await expect(controller.submit("c1", "revise", "")).rejects.toThrow(/non-empty/);
    expect(posts).toBe(0);
  });

  it("guards against double submission while a post is in flight", async () => {
    let resolveFirst: (() => void) | undefined;
    const { controller } = controllerWith(async (input) => {
      if (input.endsWith("/decisions")) {
        await new Promise<void>((resolve) => {
          resolveFirst = resolve;
        });
        return jsonResponse(candidate("c1", "accepted"));
      }
      return jsonResponse([candidate("c1")]);
    });
    const first = controller.submit("c1", "accept");
    await new Promise((r) => setTimeout(r, 0));
    await expect(controller.submit("c1", "accept")).rejects.toThrow(/in flight/);
    resolveFirst?.();
    await first;
  });

  it("requires a reviewer name", async () => {
    const api = new ApiClient("http://svc", async () => jsonResponse([]));
    const controller = new ReviewController(api, new QueueState(), new MemoryReviewerStore());
    await expect(controller.submit("c1", "accept")).rejects.toThrow(/reviewer/i);
  });
});
