/** Client-side queue state. The UI is stateless with respect to truth:
 * everything here is a cache of the service's responses plus unsubmitted
 * edit drafts, which survive failed submissions so typed revisions are
 * never lost. */

import type { Candidate, Status } from "./api.js";

export interface QueueFilters {
  status: Status | "all";
  reviewer: string;
}

export const DEFAULT_FILTERS: QueueFilters = { status: "pending", reviewer: "" };

export class QueueState {
  cards: Candidate[] = [];
  filters: QueueFilters = { ...DEFAULT_FILTERS };
  page = 0;
  readonly pageSize: number;
  banner: string | null = null;
  /** candidate id -> revision text typed but not yet accepted by the server */
  private dirty = new Map<string, string>();
  private inFlight = new Set<string>();

  constructor(pageSize = 10) {
    this.pageSize = pageSize;
  }

  replaceAll(cards: Candidate[]): void {
    this.cards = [...cards];
    const pages = this.pageCount();
    if (this.page >= pages) this.page = Math.max(0, pages - 1);
  }

  updateCard(candidate: Candidate): void {
    const i = this.cards.findIndex((c) => c.id === candidate.id);
    if (i >= 0) {
      this.cards[i] = candidate;
    } else {
      this.cards.push(candidate);
    }
  }

  pageCount(): number {
    return Math.max(1, Math.ceil(this.cards.length / this.pageSize));
  }

  currentPage(): Candidate[] {
    const start = this.page * this.pageSize;
    return this.cards.slice(start, start + this.pageSize);
  }

  nextPage(): void {
    if (this.page + 1 < this.pageCount()) this.page += 1;
  }

  prevPage(): void {
    if (this.page > 0) this.page -= 1;
  }

  // -- unsubmitted revision drafts -----------------------------------------

  markDirty(id: string, text: string): void {
    this.dirty.set(id, text);
  }

  dirtyText(id: string): string | undefined {
    return this.dirty.get(id);
  }

  clearDirty(id: string): void {
    this.dirty.delete(id);
  }

  hasDirty(id: string): boolean {
    return this.dirty.has(id);
  }

  // -- submit-in-flight guard (submit disabled while a post is pending) ----

  beginSubmit(id: string): boolean {
    if (this.inFlight.has(id)) return false;
    this.inFlight.add(id);
    return true;
  }

  endSubmit(id: string): void {
    this.inFlight.delete(id);
  }

  isInFlight(id: string): boolean {
    return this.inFlight.has(id);
  }
}
