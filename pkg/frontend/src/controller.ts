/** Orchestrates fetches and decision submissions. The DOM layer calls
 * only these methods, so a scripted session through this controller
 * exercises exactly the paths the browser app uses. */

import { ApiClient, ApiError } from "./api.js";
import type { Action, Candidate } from "./api.js";
import { QueueState } from "./state.js";

export interface ReviewerStore {
  get(): string | null;
  set(name: string): void;
}

/** localStorage-backed reviewer identity; entered once, sent with every
 * decision. Swappable for tests and for node environments. */
export class BrowserReviewerStore implements ReviewerStore {
  private readonly key = "cgforge.reviewer";

  get(): string | null {
    return window.localStorage.getItem(this.key);
  }

  set(name: string): void {
    window.localStorage.setItem(this.key, name);
  }
}

export class MemoryReviewerStore implements ReviewerStore {
  private name: string | null = null;

  get(): string | null {
    return this.name;
  }

  set(name: string): void {
    this.name = name;
  }
}

export function validateDecision(action: Action, revisedText?: string): string | null {
  if (action === "revise" && !(revisedText ?? "").trim()) {
    return "A revision needs non-empty replacement wording.";
  }
  return null;
}

export class ReviewController {
  constructor(
    readonly api: ApiClient,
    readonly state: QueueState,
    private readonly reviewerStore: ReviewerStore,
  ) {}

  reviewer(): string {
    return this.reviewerStore.get() ?? "";
  }

  setReviewer(name: string): void {
    this.reviewerStore.set(name.trim());
  }

  /** Refetch the queue. On failure the cached list is retained and the
   * banner carries a retryable error message. */
  async refresh(): Promise<boolean> {
    try {
      const cards = await this.api.listCandidates({
        status: this.state.filters.status,
        reviewer: this.state.filters.reviewer || undefined,
      });
      this.state.replaceAll(cards);
      this.state.banner = null;
      return true;
    } catch (err) {
      this.state.banner = `Could not reach the review service (${describe(err)}). ` +
        "Showing the last loaded list; retry when the service is back.";
      return false;
    }
  }

  /** Submit a decision. Client-validates revisions before POSTing; a
   * failed submission keeps the typed text dirty for resubmission. */
  async submit(id: string, action: Action, revisedText?: string): Promise<Candidate> {
    const reviewer = this.reviewer();
    if (!reviewer) {
      throw new Error("Set a reviewer name before deciding.");
    }
    const problem = validateDecision(action, revisedText);
    if (problem) {
      throw new Error(problem);
    }
    if (!this.state.beginSubmit(id)) {
      throw new Error("A decision for this candidate is already in flight.");
    }
    if (action === "revise") {
      this.state.markDirty(id, revisedText as string);
    }
    try {
      const updated = await this.api.postDecision(id, {
        reviewer,
        action,
        ...(action === "revise" ? { revised_utterance: revisedText } : {}),
      });
      this.state.updateCard(updated);
      this.state.clearDirty(id);
      this.state.banner = null;
      return updated;
    } catch (err) {
      this.state.banner =
        err instanceof ApiError && err.status === 422
          ? `The service rejected the decision: ${err.message}`
          : `Submitting failed (${describe(err)}); your text is kept for resubmit.`;
      throw err;
    } finally {
      this.state.endSubmit(id);
    }
  }
}

function describe(err: unknown): string {
  if (err instanceof ApiError) return `${err.status} ${err.code}`;
  if (err instanceof Error) return err.message;
  return String(err);
}
